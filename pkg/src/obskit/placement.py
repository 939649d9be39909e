"""Observability-optimal sensor placement.

Candidate sites come from a planform grid or from arc-length resampled
vein polylines; each site carries the empirical Gramian of its encoded
measurement.  Activating a subset of sensors sums their Gramians, and the
relaxed activation weights are optimized by projected subgradient descent
on a condition-number plus unobservability-index objective over the
box-constrained simplex slice {0 <= beta <= 1, sum(beta) = r}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .empirical_gramian import GramianResult
from .numerics import DEFAULT_TOL, symmetric_eig
from .wing_model import GeometryError, points_in_polygon


class InfeasibleStartError(RuntimeError):
    """The uniformly weighted Gramian is singular; optimization cannot start."""


@dataclass(frozen=True)
class SensorSite:
    """A candidate sensor: position, strain kind, and its Gramian."""

    x: float
    y: float
    kind: str
    gramian: GramianResult


@dataclass(frozen=True)
class PlacementProblem:
    sites: tuple
    r: int
    w_nu: float = 20.0

    def __post_init__(self):
        sites = tuple(self.sites)
        if not 1 <= self.r <= len(sites):
            raise ValueError("need 1 <= r <= number of sites")
        if self.w_nu < 0:
            raise ValueError("w_nu must be nonnegative")
        dims = {s.gramian.dim for s in sites}
        if len(dims) != 1:
            raise ValueError("all site Gramians must share one dimension")
        object.__setattr__(self, "sites", sites)


def grid_sites(model, nx, ny):
    """Axis-aligned station grid over the planform bounding box, clipped
    to the polygon interior."""
    if nx < 2 or ny < 2:
        raise GeometryError("grid must be at least 2 x 2")
    poly = model.planform
    xs = np.linspace(poly[:, 0].min(), poly[:, 0].max(), nx)
    ys = np.linspace(poly[:, 1].min(), poly[:, 1].max(), ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = points_in_polygon(pts, poly)
    pts = pts[keep]
    if pts.shape[0] == 0:
        raise GeometryError("no grid stations fall inside the planform")
    return pts


def _resample_polyline(points, spacing):
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise GeometryError("polyline needs at least two vertices")
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    total = float(seg_len.sum())
    if total <= 0.0:
        raise GeometryError("degenerate polyline with zero length")
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    closed = np.allclose(pts[0], pts[-1])
    n_whole = int(np.floor(total / spacing + 1e-9))
    s_values = spacing * np.arange(n_whole + 1)
    if closed:
        s_values = s_values[s_values < total - 1e-9 * max(total, 1.0)]
    elif total - s_values[-1] > 1e-9 * max(total, 1.0):
        s_values = np.append(s_values, total)
    else:
        s_values[-1] = total
    out_x = np.interp(s_values, arc, pts[:, 0])
    out_y = np.interp(s_values, arc, pts[:, 1])
    return np.column_stack([out_x, out_y])


def vein_sites(veins, spacing):
    """Positions spaced by arc length along each vein polyline."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    return np.vstack([_resample_polyline(v, spacing) for v in veins])


def combined_gramian(beta, sites):
    """Weighted sum of the per-site Gramians."""
    beta = np.asarray(beta, dtype=float)
    if beta.size != len(sites):
        raise ValueError("beta length must match the number of sites")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    stack = np.stack([s.gramian.W for s in sites])
    return np.tensordot(beta, stack, axes=1)


def project_box_simplex(v, total):
    """Euclidean projection onto {0 <= beta <= 1, sum(beta) = total}.

    Bisection on the dual shift: clip(v - t, 0, 1) has a sum monotone
    decreasing in t, so the feasible shift brackets in [min(v)-1, max(v)].
    """
    v = np.asarray(v, dtype=float)
    if not 0 <= total <= v.size:
        raise ValueError("total must lie in [0, len(v)]")
    lo = float(v.min()) - 1.0
    hi = float(v.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, 1.0).sum() > total:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi), 0.0, 1.0)


def round_to_discrete(beta, r, lambda_mins=None):
    """Indices of the r largest activations.

    Ties break toward the site with the larger individual minimum
    eigenvalue, then toward the lower site index.
    """
    beta = np.asarray(beta, dtype=float)
    if lambda_mins is None:
        lambda_mins = np.zeros_like(beta)
    order = sorted(range(beta.size),
                   key=lambda i: (-beta[i], -lambda_mins[i], i))
    return tuple(sorted(order[:r]))


def _extremal_quadratic_forms(w, stack, gap=1e-9):
    """Per-site quadratic forms through the extremal eigenvectors of w.

    Near-degenerate eigenvalues (within ``gap``) use the averaged spectral
    projector instead of a single eigenvector.
    """
    evals, evecs = symmetric_eig(w)
    scale = max(abs(evals[-1]), 1.0)

    def averaged(target):
        sel = np.abs(evals - target) <= gap * scale
        vecs = evecs[:, sel]
        forms = np.einsum("pij,ik,jk->pk", stack, vecs, vecs)
        return forms.mean(axis=1)

    return evals[0], evals[-1], averaged(evals[0]), averaged(evals[-1])


def _objective(evals, w_nu, rtol):
    lam_min = float(evals[0])
    lam_max = float(evals[-1])
    if lam_min <= rtol * max(lam_max, 0.0) or lam_min <= 0.0:
        return np.inf
    return lam_max / lam_min + w_nu / lam_min


class PlacementResult(NamedTuple):
    beta: np.ndarray
    selected: tuple
    objective: float
    objective_relaxed: float
    trace: list
    iterations: int


def optimize_placement(problem, seed=0, iterations=300, restarts=5, rtol=DEFAULT_TOL.rank_rtol):
    """Projected subgradient descent on kappa + w_nu * nu over activations.

    Deterministic given the seed: a fixed number of diminishing-step
    iterations per restart with best-iterate tracking, followed by top-r
    rounding of the best relaxed activation.  Subgradients use the
    extremal eigenvectors of the combined Gramian.
    """
    sites = problem.sites
    p = len(sites)
    r = problem.r
    w_nu = problem.w_nu
    stack = np.stack([s.gramian.W for s in sites])
    lambda_mins = np.array([float(s.gramian.eigenvalues[0]) for s in sites])

    uniform = np.full(p, r / p)
    evals, _ = symmetric_eig(np.tensordot(uniform, stack, axes=1))
    if _objective(evals, w_nu, rtol) == np.inf:
        raise InfeasibleStartError(
            "combined Gramian at the uniform activation is singular; "
            "increase r or supply different sites")

    rng = np.random.default_rng(seed)
    starts = [uniform]
    for _ in range(max(restarts - 1, 0)):
        starts.append(project_box_simplex(rng.uniform(0.0, 1.0, size=p) * r, r))

    best_f = np.inf
    best_beta = uniform
    trace = []
    for beta0 in starts:
        beta = beta0
        for it in range(iterations):
            w = np.tensordot(beta, stack, axes=1)
            lam_min, lam_max, q_min, q_max = _extremal_quadratic_forms(w, stack)
            f = _objective(np.array([lam_min, lam_max]), w_nu, rtol)
            if f < best_f:
                best_f = f
                best_beta = beta.copy()
            trace.append(best_f)
            if lam_min <= 0.0 or f == np.inf:
                # push back toward a nonsingular combination
                grad = -q_min
            else:
                grad_kappa = (q_max * lam_min - lam_max * q_min) / lam_min**2
                grad_nu = -q_min / lam_min**2
                grad = grad_kappa + w_nu * grad_nu
            norm = np.linalg.norm(grad)
            if norm == 0.0:
                break
            step = 0.5 * r / np.sqrt(it + 1.0)
            beta = project_box_simplex(beta - step * grad / norm, r)

    selected = round_to_discrete(best_beta, r, lambda_mins)
    evals_sel, _ = symmetric_eig(stack[list(selected)].sum(axis=0))
    return PlacementResult(
        beta=best_beta,
        selected=selected,
        objective=_objective(evals_sel, w_nu, rtol),
        objective_relaxed=best_f,
        trace=trace,
        iterations=len(trace),
    )


def subset_objective(indices, sites, w_nu, rtol=DEFAULT_TOL.rank_rtol):
    """Objective of a discrete sensor subset (for baselines and tests)."""
    stack = np.stack([sites[i].gramian.W for i in indices])
    evals, _ = symmetric_eig(stack.sum(axis=0))
    return _objective(evals, w_nu, rtol)


def single_linkage_clusters(positions, radius):
    """Number of single-linkage clusters at the given merge radius."""
    pts = np.asarray(positions, dtype=float)
    n = pts.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if np.hypot(*(pts[i] - pts[j])) <= radius:
                pi, pj = find(i), find(j)
                if pi != pj:
                    parent[pi] = pj
    return len({find(i) for i in range(n)})
