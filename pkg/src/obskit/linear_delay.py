"""Observability of discrete-time LTI systems with windowed output delay.

The measured output at step k taps a finite window of past states,
``y_k = sum_tau C_tau x_{k-tau}``.  The analysis reduces the delayed system
to an effective delay-free one through the matrix ``Cbar = sum_tau C_tau
A^(N-tau)``, whose observability matrix decides reconstructability of the
oldest state in the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .numerics import DEFAULT_TOL, numeric_rank


class UnobservableError(RuntimeError):
    """State reconstruction requested for a rank-deficient system."""


def _as_matrix(m, name):
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class LinearDelaySystem:
    """Discrete LTI dynamics with delay-tap output matrices C_0..C_N.

    ``taps[tau]`` weights the state tau steps in the past; N = len(taps)-1
    is the window length in steps.
    """

    A: np.ndarray
    B: np.ndarray
    taps: tuple

    def __post_init__(self):
        a = _as_matrix(self.A, "A")
        if a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        b = _as_matrix(self.B, "B")
        if b.shape[0] != a.shape[0]:
            raise ValueError("B row count must match the state dimension")
        taps = tuple(_as_matrix(c, f"taps[{i}]") for i, c in enumerate(self.taps))
        if not taps:
            raise ValueError("need at least one output tap (C_0)")
        p, n = taps[0].shape
        if n != a.shape[0]:
            raise ValueError("tap column count must match the state dimension")
        if any(c.shape != (p, n) for c in taps):
            raise ValueError("all taps must share the same shape")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "taps", taps)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.taps[0].shape[0]

    @property
    def window(self):
        """Window length N in steps (oldest tapped state is x_{k-N})."""
        return len(self.taps) - 1


@dataclass(frozen=True)
class UniformTaps:
    """Taps C_tau = gamma_tau * C with scalar gains gamma_0..gamma_N."""

    C: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        g = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        if not np.any(g != 0.0):
            raise ValueError("at least one gamma must be nonzero")
        object.__setattr__(self, "gammas", g)


@dataclass(frozen=True)
class HeterogeneousTaps:
    """Taps C_tau = G_tau * C with per-output diagonal gains G_0..G_N."""

    C: np.ndarray
    gains: tuple = field(default_factory=tuple)

    def __post_init__(self):
        c = _as_matrix(self.C, "C")
        gains = tuple(_as_matrix(g, f"gains[{i}]") for i, g in enumerate(self.gains))
        if not gains:
            raise ValueError("need at least one gain matrix")
        p = c.shape[0]
        if any(g.shape != (p, p) for g in gains):
            raise ValueError("each gain must be p x p")
        object.__setattr__(self, "C", c)
        object.__setattr__(self, "gains", gains)


def load_system(source):
    """Build a LinearDelaySystem from a JSON document, path, or dict.

    Schema: ``{"A": [[...]], "B": [[...]], "taps": [[[...]], ...]}``; B is
    optional (defaults to no inputs).
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    if "A" not in doc or "taps" not in doc:
        raise ValueError("system document needs 'A' and 'taps' entries")
    a = np.asarray(doc["A"], dtype=float)
    b = np.asarray(doc["B"], dtype=float) if "B" in doc else np.zeros((a.shape[0], 0))
    return LinearDelaySystem(A=a, B=b, taps=tuple(np.asarray(c, dtype=float) for c in doc["taps"]))


def tstep_observability(A, C, T):
    """Stacked T-step observability matrix [C; CA; ...; CA^(T-1)]."""
    if T < 1:
        raise ValueError("T must be >= 1")
    A = _as_matrix(A, "A")
    C = _as_matrix(C, "C")
    if C.shape[1] != A.shape[0]:
        raise ValueError("C column count must match A")
    blocks = []
    cur = C
    for _ in range(T):
        blocks.append(cur)
        cur = cur @ A
    return np.vstack(blocks)


def effective_output_matrix(sys):
    """Effective output matrix Cbar = sum_tau C_tau A^(N-tau)."""
    n = sys.n
    out = np.zeros((sys.p, n))
    power = np.eye(n)
    # iterate tau = N, N-1, ..., 0 so the accumulated power is A^(N-tau)
    for tap in reversed(sys.taps):
        out += tap @ power
        power = power @ sys.A
    return out


def delayed_observability_matrix(sys):
    """Observability matrix [Cbar; Cbar A; ...; Cbar A^(n-1)] of the delayed system."""
    return tstep_observability(sys.A, effective_output_matrix(sys), sys.n)


class UniformFactorization(NamedTuple):
    poly: np.ndarray
    rank_delayed: int
    rank_delayfree: int
    poly_singular: bool


def uniform_factorization(A, uniform, rtol=DEFAULT_TOL.rank_rtol):
    """Factor the delayed observability matrix of a uniform-taps system.

    With C_tau = gamma_tau C the delayed observability matrix equals
    ``O_n @ P(A)`` where ``P(A) = sum_j gamma_{N-j} A^j``.  The identity is
    verified entrywise; rank equality between the delayed and delay-free
    systems follows whenever P(A) is nonsingular.
    """
    A = _as_matrix(A, "A")
    n = A.shape[0]
    gammas = uniform.gammas
    big_n = gammas.size - 1
    taps = tuple(g * uniform.C for g in gammas)
    sys = LinearDelaySystem(A=A, B=np.zeros((n, 0)), taps=taps)
    obs_delayed = delayed_observability_matrix(sys)

    poly = np.zeros((n, n))
    power = np.eye(n)
    for j in range(big_n + 1):
        poly += gammas[big_n - j] * power
        power = power @ A

    obs_free = tstep_observability(A, uniform.C, n)
    product = obs_free @ poly
    scale = max(np.abs(obs_delayed).max(), np.abs(product).max(), 1.0)
    if np.abs(obs_delayed - product).max() > 1e-12 * scale:
        raise ArithmeticError("uniform factorization identity violated beyond tolerance")

    return UniformFactorization(
        poly=poly,
        rank_delayed=numeric_rank(obs_delayed, rtol),
        rank_delayfree=numeric_rank(obs_free, rtol),
        poly_singular=numeric_rank(poly, rtol) < n,
    )


class HeterogeneousRankBound(NamedTuple):
    rank_delayed: int
    rank_delayfree: int
    bound_holds: bool


def heterogeneous_rank_bound(A, het, rtol=DEFAULT_TOL.rank_rtol):
    """Rank comparison for heterogeneous sensing, C_tau = G_tau C.

    The delayed observability matrix factors through the tall stack
    [C; CA; ...; CA^(N+n-1)] premultiplied by a block-Toeplitz gain matrix,
    so its rank can never exceed the delay-free rank.
    """
    A = _as_matrix(A, "A")
    n = A.shape[0]
    gains = het.gains
    big_n = len(gains) - 1
    p = het.C.shape[0]

    tall = tstep_observability(A, het.C, big_n + n)
    toeplitz = np.zeros((n * p, (big_n + n) * p))
    for i in range(n):
        for j, gain in enumerate(reversed(gains)):  # G_N, G_{N-1}, ..., G_0
            toeplitz[i * p:(i + 1) * p, (i + j) * p:(i + j + 1) * p] = gain
    obs_delayed = toeplitz @ tall

    rank_delayed = numeric_rank(obs_delayed, rtol)
    rank_free = numeric_rank(tstep_observability(A, het.C, n), rtol)
    return HeterogeneousRankBound(rank_delayed, rank_free, rank_delayed <= rank_free)


def _input_convolution_blocks(sys):
    """Per-lag blocks (sum_{i=1}^tau C_{i-1} A^{tau-i}) B for tau = 1..N."""
    blocks = []
    acc = np.zeros((sys.p, sys.n))
    for tau in range(1, sys.window + 1):
        acc = acc @ sys.A + sys.taps[tau - 1]
        blocks.append(acc @ sys.B)
    return blocks


def simulate(sys, x_start, inputs, n_outputs):
    """Forward-simulate outputs y_k..y_{k+n_outputs-1} of the delayed system.

    ``x_start`` is the oldest tapped state x_{k-N}; ``inputs`` holds
    u_{k-N}..u_{k+n_outputs-2} (length N+n_outputs-1, may be empty for
    autonomous systems).
    """
    big_n = sys.window
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.m)
    n_needed = big_n + n_outputs - 1
    if inputs.shape[0] != n_needed:
        raise ValueError(f"expected {n_needed} input samples, got {inputs.shape[0]}")
    states = [np.asarray(x_start, dtype=float)]
    for j in range(n_needed):
        states.append(sys.A @ states[-1] + sys.B @ inputs[j])
    outputs = np.zeros((n_outputs, sys.p))
    for j in range(n_outputs):
        for tau, tap in enumerate(sys.taps):
            outputs[j] += tap @ states[big_n + j - tau]
    return outputs


def reconstruct_initial_state(sys, outputs, inputs, rtol=DEFAULT_TOL.rank_rtol):
    """Recover x_{k-N} from n consecutive outputs and the input history.

    ``outputs`` stacks y_k..y_{k+n-1}; ``inputs`` stacks
    u_{k-N}..u_{k+n-2}.  Two corrections remove the input contribution:
    the per-measurement convolution of the window inputs, and the
    block-Toeplitz propagation of inputs between measurement steps.  The
    corrected stack equals ``Obar x_{k-N}`` and is solved by least squares.

    Returns (x_hat, relative_residual).
    """
    n, big_n = sys.n, sys.window
    outputs = np.asarray(outputs, dtype=float).reshape(n, sys.p)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, sys.m)
    if inputs.shape[0] != big_n + n - 1:
        raise ValueError(f"expected {big_n + n - 1} input samples, got {inputs.shape[0]}")

    obs = delayed_observability_matrix(sys)
    if numeric_rank(obs, rtol) < n:
        raise UnobservableError("delayed observability matrix is rank-deficient")

    cbar = effective_output_matrix(sys)
    conv_blocks = _input_convolution_blocks(sys)

    # correction 1: window convolution of inputs within each measurement
    corrected = outputs.copy()
    for j in range(n):
        for tau in range(1, big_n + 1):
            # u_{k+j-tau} sits at array index N+j-tau
            corrected[j] -= conv_blocks[tau - 1] @ inputs[big_n + j - tau]

    # correction 2: block-Toeplitz input propagation between measurements
    stacked = corrected.reshape(n * sys.p)
    powers = [np.eye(n)]
    for _ in range(n - 2):
        powers.append(powers[-1] @ sys.A)
    for j in range(1, n):
        for i in range(j):
            block = cbar @ powers[j - 1 - i] @ sys.B
            stacked[j * sys.p:(j + 1) * sys.p] -= block @ inputs[i]

    x_hat, *_ = np.linalg.lstsq(obs, stacked, rcond=None)
    residual = np.linalg.norm(obs @ x_hat - stacked)
    residual /= max(np.linalg.norm(stacked), 1e-300)
    return x_hat, residual


def analyze(sys, rtol=DEFAULT_TOL.rank_rtol):
    """Summary dict with ranks and the observability verdict (CLI payload)."""
    cbar = effective_output_matrix(sys)
    obs = delayed_observability_matrix(sys)
    rank_delayed = numeric_rank(obs, rtol)
    rank_free = numeric_rank(tstep_observability(sys.A, sys.taps[0], sys.n), rtol)
    return {
        "n": sys.n,
        "p": sys.p,
        "window": sys.window,
        "effective_output_matrix": cbar.tolist(),
        "rank_delayed": rank_delayed,
        "rank_delayfree_c0": rank_free,
        "observable": bool(rank_delayed == sys.n),
    }
