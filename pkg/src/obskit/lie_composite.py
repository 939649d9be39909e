"""Lie-derivative machinery for composite and delayed scalar outputs.

Higher Lie derivatives of a composition g(h(x)) along a drift field expand
over integer partitions held in a multiset table; the table is built by a
two-branch recursion (increment one element, or append a 1) and keeps
multiplicities.  All differentiation here is numeric: time derivatives come
from RK4 flow sampling with Richardson-extrapolated central differences,
spatial gradients from central differences in each state coordinate.  No
symbolic engine is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
from numpy.polynomial import polynomial as npoly

from .numerics import (
    DEFAULT_TOL,
    central_diff_weights,
    integrate_rk4,
    numeric_rank,
    trapezoid_quadrature,
)


class EvaluationError(RuntimeError):
    """A derivative evaluation produced a non-finite value."""


# ---------------------------------------------------------------------------
# multiset table (integer partitions with multiplicity)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultisetTable:
    """Partitions of k into j parts, with multiplicity, for j = 1..k.

    ``entries[j]`` is a list of sorted tuples; repeated tuples encode the
    multiplicity with which a partition occurs in the recursion, which is
    exactly the coefficient needed by the composite chain rule.
    """

    k: int
    entries: dict


@lru_cache(maxsize=None)
def _table_entries(k):
    tables = {1: {1: ((1,),)}}
    for kk in range(2, k + 1):
        prev = tables[kk - 1]
        cur = {}
        for j, multisets in prev.items():
            # branch 1: increment one element instance, part count unchanged
            bumped = cur.setdefault(j, [])
            for s in multisets:
                for i in range(len(s)):
                    t = list(s)
                    t[i] += 1
                    bumped.append(tuple(sorted(t)))
            # branch 2: append a 1, part count grows by one
            appended = cur.setdefault(j + 1, [])
            for s in multisets:
                appended.append(tuple(sorted(s + (1,))))
        for j, multisets in cur.items():
            for s in multisets:
                assert len(s) == j and sum(s) == kk, "partition bookkeeping broke"
        tables[kk] = {j: tuple(ms) for j, ms in cur.items()}
    return tables[k]


def multiset_table(k):
    """Build the partition table used by the composite chain rule."""
    if k < 1:
        raise ValueError("k must be >= 1")
    entries = {j: list(ms) for j, ms in _table_entries(k).items()}
    return MultisetTable(k=k, entries=entries)


def composite_expansion(g_derivs, lie_values, k):
    """Evaluate the k-th Lie derivative of g(h(.)) from its ingredients.

    ``g_derivs``  derivatives g^(1)..g^(k) of the outer map at h(x)
    ``lie_values`` Lie derivatives L^1 h .. L^k h at x

    Sums, over partitions s of k into j parts, the products of the inner
    Lie derivatives weighted by the j-th outer derivative.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    g_derivs = np.asarray(g_derivs, dtype=float)
    lie_values = np.asarray(lie_values, dtype=float)
    if g_derivs.size < k or lie_values.size < k:
        raise ValueError("need k outer derivatives and k Lie values")
    table = _table_entries(k)
    total = 0.0
    for j in range(1, k + 1):
        inner = 0.0
        for s in table.get(j, ()):
            prod = 1.0
            for si in s:
                prod *= lie_values[si - 1]
            inner += prod
        total += g_derivs[j - 1] * inner
    return total


# ---------------------------------------------------------------------------
# outer (scalar) maps with derivative families
# ---------------------------------------------------------------------------

def _fd_scalar_deriv(fn, v, order, step=0.05):
    """Central-difference derivative of a scalar map, Richardson level 2."""
    offsets, weights = central_diff_weights(order)
    out = []
    for h in (step, 0.5 * step):
        samples = np.array([fn(v + o * h) for o in offsets], dtype=float)
        out.append(weights @ samples / h**order)
    return (4.0 * out[1] - out[0]) / 3.0


@dataclass(frozen=True)
class OuterFunction:
    """Scalar-to-scalar outer map with an available derivative family.

    ``derivs(j, v)`` returns the j-th derivative at v (j >= 1); when absent
    a finite-difference fallback is used.
    """

    fn: Callable
    derivs: Callable = None
    name: str = "custom"

    def __call__(self, v):
        return self.fn(v)

    def deriv(self, j, v):
        if j == 0:
            return self.fn(v)
        if self.derivs is not None:
            return self.derivs(j, v)
        return _fd_scalar_deriv(self.fn, v, j)


def _poly_chain_family(p0, q):
    """Derivative family of p(u(v)) where du/dv = q(u), as polynomials in u.

    Differentiating any polynomial r(u) in v gives r'(u) * q(u), so the
    whole family stays polynomial in u and can be evaluated exactly.
    """
    polys = [np.asarray(p0, dtype=float)]

    def deriv(j, u_value):
        while len(polys) <= j:
            polys.append(npoly.polymul(npoly.polyder(polys[-1]), q))
        return float(npoly.polyval(u_value, polys[j]))

    return deriv


def tanh_outer():
    deriv = _poly_chain_family([0.0, 1.0], [1.0, 0.0, -1.0])  # u' = 1 - u^2
    return OuterFunction(fn=np.tanh, derivs=lambda j, v: deriv(j, np.tanh(v)), name="tanh")


def logistic_outer(slope=1.0, half_max=0.0):
    """Logistic map 1 / (1 + exp(-slope*(v - half_max)))."""
    deriv = _poly_chain_family([0.0, 1.0], [0.0, 1.0, -1.0])  # u' = u - u^2

    def fn(v):
        return 1.0 / (1.0 + np.exp(-slope * (v - half_max)))

    def derivs(j, v):
        return slope**j * deriv(j, fn(v))

    return OuterFunction(fn=fn, derivs=derivs, name="logistic")


def exp_outer():
    return OuterFunction(fn=np.exp, derivs=lambda j, v: float(np.exp(v)), name="exp")


def identity_outer():
    return OuterFunction(fn=lambda v: v, derivs=lambda j, v: 1.0 if j == 1 else 0.0,
                         name="identity")


def constant_outer(value):
    return OuterFunction(fn=lambda v: value, derivs=lambda j, v: 0.0, name="constant")


# ---------------------------------------------------------------------------
# numeric Lie derivatives via flow sampling
# ---------------------------------------------------------------------------

def _flow_states(f0, x, dt, n_side, substeps):
    """States of the f0-flow at times j*dt, j = -n_side..n_side.

    Forward and backward arcs are integrated separately with RK4 using
    ``substeps`` internal steps per dt interval.
    """
    x = np.asarray(x, dtype=float)
    states = [None] * (2 * n_side + 1)
    states[n_side] = x
    span = n_side * dt
    step = dt / substeps
    _, fwd = integrate_rk4(lambda t, y: f0(y), x, 0.0, span, step)
    _, bwd = integrate_rk4(lambda t, y: -f0(y), x, 0.0, span, step)
    for j in range(1, n_side + 1):
        states[n_side + j] = fwd[j * substeps]
        states[n_side - j] = bwd[j * substeps]
    return states


def lie_derivatives_up_to(f0, h, x, kmax, t_step=0.05, levels=3, substeps=8):
    """Lie derivatives L^0 h .. L^kmax h at x along the drift field f0.

    The scalar readout h is sampled along the flow of f0 and differentiated
    in time at t=0 with minimal central stencils refined by a Richardson
    tableau of ``levels`` step halvings.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros(kmax + 1)
    out[0] = float(h(x))
    if not np.isfinite(out[0]):
        raise EvaluationError("output map returned a non-finite value")
    if kmax == 0:
        return out

    m_max = (kmax + 1) // 2
    refine = 2 ** (levels - 1)
    n_side = m_max * refine
    fine_dt = t_step / refine
    states = _flow_states(f0, x, fine_dt, n_side, substeps)
    values = np.array([h(s) for s in states], dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("flow readout produced non-finite values")
    center = n_side

    for k in range(1, kmax + 1):
        offsets, weights = central_diff_weights(k)
        estimates = []
        for lev in range(levels):
            stride = refine >> lev
            dt_lev = fine_dt * stride
            sample = values[center + offsets * stride]
            estimates.append(float(weights @ sample) / dt_lev**k)
        # Richardson tableau for an even-power error expansion, ratio 2
        tab = list(estimates)
        factor = 4.0
        for q in range(1, levels):
            tab = [(factor * tab[i + 1] - tab[i]) / (factor - 1.0)
                   for i in range(len(tab) - 1)]
            factor *= 4.0
        out[k] = tab[0]
    return out


def lie_derivative(f0, h, x, k, **kwargs):
    """k-th Lie derivative of h along f0 at x (k = 0 returns h(x))."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return float(lie_derivatives_up_to(f0, h, x, k, **kwargs)[k])


def lie_gradient_rows(f0, h, x, kmax, fd_step=DEFAULT_TOL.fd_step, **lie_kwargs):
    """Gradients of L^0 h .. L^kmax h at x, one row per order.

    Spatial central differences with one Richardson refinement; every
    perturbed evaluation reuses a single flow sampling for all orders.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    rows = np.zeros((kmax + 1, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        vals = {}
        for c in (1.0, -1.0, 0.5, -0.5):
            vals[c] = lie_derivatives_up_to(f0, h, x + c * fd_step * e, kmax, **lie_kwargs)
        d_full = (vals[1.0] - vals[-1.0]) / (2.0 * fd_step)
        d_half = (vals[0.5] - vals[-0.5]) / fd_step
        rows[:, i] = (4.0 * d_half - d_full) / 3.0
    return rows


def lie_gradient(f0, h, x, k, fd_step=DEFAULT_TOL.fd_step, **lie_kwargs):
    """Gradient (covector) of the k-th Lie derivative of h at x."""
    return lie_gradient_rows(f0, h, x, k, fd_step=fd_step, **lie_kwargs)[k]


# ---------------------------------------------------------------------------
# observability matrices of composite outputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothSystem:
    """Control-free smooth system with scalar output h and outer map g.

    ``f0`` maps a state vector to its derivative; ``h`` is the inner scalar
    output; ``g`` wraps h to form the measured composite output g(h(x)).
    """

    f0: Callable
    h: Callable
    g: OuterFunction
    dim: int
    t_step: float = 0.05
    fd_step: float = DEFAULT_TOL.fd_step
    levels: int = 3
    substeps: int = 8

    def lie_kwargs(self):
        return {"t_step": self.t_step, "levels": self.levels, "substeps": self.substeps}


class ObservabilityMatrices(NamedTuple):
    dG_h: np.ndarray
    dG_goh: np.ndarray
    det_h: float
    det_goh: float
    rank_h: int
    rank_goh: int
    g_prime: float
    residual: float
    ratio_check: bool


def observability_matrices(sys, x, rtol=DEFAULT_TOL.rank_rtol):
    """Jacobians of the observation spaces of h and of g(h), plus verdicts.

    Rows are gradients of L^k at x for k = 0..n-1.  The determinant of the
    composite-output Jacobian must equal (dg/dh)^n times the inner one;
    ``residual`` reports the observed gap and ``ratio_check`` its pass/fail
    at the documented tolerance.
    """
    x = np.asarray(x, dtype=float)
    n = sys.dim
    kw = sys.lie_kwargs()
    dg_h = lie_gradient_rows(sys.f0, sys.h, x, n - 1, fd_step=sys.fd_step, **kw)

    def goh(y):
        return float(sys.g(sys.h(y)))

    dg_goh = lie_gradient_rows(sys.f0, goh, x, n - 1, fd_step=sys.fd_step, **kw)

    det_h = float(np.linalg.det(dg_h))
    det_goh = float(np.linalg.det(dg_goh))
    g_prime = float(sys.g.deriv(1, float(sys.h(x))))
    residual = abs(det_goh - g_prime**n * det_h)
    return ObservabilityMatrices(
        dG_h=dg_h,
        dG_goh=dg_goh,
        det_h=det_h,
        det_goh=det_goh,
        rank_h=numeric_rank(dg_h, rtol),
        rank_goh=numeric_rank(dg_goh, rtol),
        g_prime=g_prime,
        residual=residual,
        ratio_check=bool(residual <= 1e-4 * max(1.0, abs(det_h))),
    )


# ---------------------------------------------------------------------------
# delayed (convolution-kernel) outputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayedOutputSpec:
    """Convolution output y(t) = integral of C(tau) h_aux(x(t-N), tau) dtau.

    ``h_aux(x, tau)`` expresses the lagged state sample through the oldest
    state in the window; supplying a consistent h_aux is the caller's
    responsibility.
    """

    h_aux: Callable
    kernel: Callable
    window: float
    lag_grid: int = 9

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be positive")
        if self.lag_grid < 2:
            raise ValueError("lag_grid must be >= 2")


class DelayedJacobianRank(NamedTuple):
    rank: int
    rank_aux: int
    proposition_holds: bool
    dG: np.ndarray


def delayed_jacobian_rank(spec, f0, x, n, rtol=DEFAULT_TOL.rank_rtol,
                          fd_step=DEFAULT_TOL.fd_step, **lie_kwargs):
    """Rank test for the delayed output via the auxiliary Jacobian family.

    Builds the n x n Jacobian of Lie derivatives of h_aux(., tau) at every
    lag on the grid, integrates the family against the kernel by trapezoid
    quadrature to get the delayed-output Jacobian, and reports both ranks.
    A rank-deficient auxiliary family must force a rank-deficient delayed
    Jacobian; ``proposition_holds`` records that implication.
    """
    x = np.asarray(x, dtype=float)
    taus = np.linspace(0.0, spec.window, spec.lag_grid)
    stack = np.zeros((spec.lag_grid, n, n))
    for idx, tau in enumerate(taus):
        def h_tau(y, _tau=tau):
            return float(spec.h_aux(y, _tau))

        stack[idx] = lie_gradient_rows(f0, h_tau, x, n - 1, fd_step=fd_step, **lie_kwargs)
    if not np.all(np.isfinite(stack)):
        raise EvaluationError("auxiliary Jacobian family has non-finite rows")

    kernel_vals = np.array([float(spec.kernel(t)) for t in taus])
    dg = trapezoid_quadrature(kernel_vals[:, None, None] * stack, taus[1] - taus[0])

    rank_aux = numeric_rank(stack.reshape(spec.lag_grid * n, n), rtol)
    rank = numeric_rank(dg, rtol)
    holds = (rank_aux == n) or (rank < n)
    return DelayedJacobianRank(rank=rank, rank_aux=rank_aux,
                               proposition_holds=bool(holds), dG=dg)
