"""Shared numerical kernels.

Fixed-step RK4 integration, symmetric eigen-decomposition, tolerance-based
matrix rank, composite trapezoid quadrature, and finite-difference stencil
weights. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegrationDivergedError(RuntimeError):
    """A trajectory produced a non-finite state."""

    def __init__(self, t):
        super().__init__(f"integration diverged: non-finite state at t={t:.9g}")
        self.t = t


@dataclass(frozen=True)
class ToleranceConfig:
    """Shared tolerances.

    rank_rtol   singular values below rank_rtol * sigma_max count as zero
    integ_step  default fixed integration step, seconds
    fd_step     state perturbation for spatial finite differences
    """

    rank_rtol: float = 1e-10
    integ_step: float = 1e-4
    fd_step: float = 1e-4

    def __post_init__(self):
        if min(self.rank_rtol, self.integ_step, self.fd_step) <= 0:
            raise ValueError("all tolerances must be strictly positive")


DEFAULT_TOL = ToleranceConfig()


def integrate_rk4(rhs, x0, t0, t1, step):
    """Integrate ``x' = rhs(t, x)`` with classic fixed-step 4th-order RK.

    Returns ``(ts, xs)`` where ``xs[i]`` is the state at ``ts[i]``.  The grid
    is ``t0 + k*step``; the final step is shortened so that ``ts[-1] == t1``
    exactly.

    Raises IntegrationDivergedError when a non-finite state appears.
    """
    if not t1 > t0:
        raise ValueError(f"t1={t1} must exceed t0={t0}")
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    span = t1 - t0
    n_full = int(np.floor(span / step + 1e-9))
    knots = t0 + step * np.arange(n_full + 1)
    if t1 - knots[-1] > 1e-9 * max(abs(span), step):
        knots = np.append(knots, t1)
    else:
        knots[-1] = t1
    xs = np.empty((knots.size, x.size))
    xs[0] = x
    for idx in range(knots.size - 1):
        t = knots[idx]
        h = knots[idx + 1] - t
        k1 = np.asarray(rhs(t, x), dtype=float)
        k2 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(rhs(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(rhs(t + h, x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError(knots[idx + 1])
        xs[idx + 1] = x
    return knots, xs


def symmetric_eig(w):
    """Eigen-decomposition of a (nearly) symmetric matrix.

    The input is symmetrized as (W + W^T)/2 first.  Returns eigenvalues in
    ascending order and the matching orthonormal eigenvectors as columns.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    evals, evecs = np.linalg.eigh(0.5 * (w + w.T))
    return evals, evecs


def numeric_rank(m, rtol=DEFAULT_TOL.rank_rtol):
    """Number of singular values exceeding ``rtol * sigma_max``."""
    if rtol <= 0:
        raise ValueError("rtol must be positive")
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def trapezoid_quadrature(samples, step):
    """Composite trapezoid rule over a uniform grid.

    ``samples`` may be scalar-valued (1-D) or array-valued (time along the
    first axis); integration is along axis 0.
    """
    a = np.asarray(samples, dtype=float)
    if a.shape[0] < 2:
        raise ValueError("need at least two samples")
    w = np.ones(a.shape[0])
    w[0] = w[-1] = 0.5
    out = step * np.tensordot(w, a, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def fd_weights(order, offsets):
    """Finite-difference weights for the d^order/dt^order at 0 on ``offsets``.

    Fornberg's recursion; ``offsets`` are the (distinct) sample locations in
    units of the grid step.  Weights must later be divided by step**order.
    """
    offsets = np.asarray(offsets, dtype=float)
    n = offsets.size
    if order < 0 or order >= n:
        raise ValueError("need more sample points than the derivative order")
    # c[j, m] = weight of sample j for the m-th derivative (Fornberg 1988)
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    for i in range(1, n):
        c2 = 1.0
        mn = min(i, order)
        for j in range(i):
            c3 = offsets[i] - offsets[j]
            c2 *= c3
            if j == i - 1:
                # row i from the not-yet-updated row i-1
                for m in range(mn, 0, -1):
                    c[i, m] = c1 * (m * c[i - 1, m - 1] - offsets[i - 1] * c[i - 1, m]) / c2
                c[i, 0] = -c1 * offsets[i - 1] * c[i - 1, 0] / c2
            for m in range(mn, 0, -1):
                c[j, m] = (offsets[i] * c[j, m] - m * c[j, m - 1]) / c3
            c[j, 0] = offsets[i] * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def central_diff_weights(order):
    """Minimal symmetric central stencil for the given derivative order.

    Returns ``(offsets, weights)`` with integer offsets ``-m..m`` where
    ``m = ceil(order / 2)``; leading truncation error is O(step^2).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    m = (order + 1) // 2
    offsets = np.arange(-m, m + 1)
    return offsets, fd_weights(order, offsets)
