"""Flexible flapping-wing dynamics with modal deformation and surface strain.

The wing is a thin plate in a rotating frame; out-of-plane deformation is a
sum of mode shapes weighted by modal coordinates.  Modal dynamics couple to
the plate rotation rates (P, Q, R) through a stiffness correction and an
applied-acceleration mass matrix, with the rotational accelerations acting
as the control input.  Aerodynamic loads are not modeled.

Default mode shapes are assumed modes (clamped-free beam along span, a
chordwise-linear torsion-like shape), normalized to unit modal mass over
the planform.  They stand in for measured or finite-element modes, which
can be loaded from a grid file instead; all downstream wing results are
therefore qualitative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Callable, NamedTuple

import numpy as np

from .numerics import integrate_rk4


class GeometryError(ValueError):
    """A probe point fell outside the planform (or geometry is degenerate)."""


# ---------------------------------------------------------------------------
# planform geometry
# ---------------------------------------------------------------------------

def points_in_polygon(points, polygon, edge_tol=1e-9):
    """Even-odd containment test; points within edge_tol of an edge count in."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(polygon, dtype=float)
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    x1 = poly[:, 0][None, :]
    y1 = poly[:, 1][None, :]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]

    crosses = (y1 > y) != (y2 > y)
    denom = np.where(y2 - y1 == 0.0, 1.0, y2 - y1)
    x_at_y = x1 + (y - y1) * (x2 - x1) / denom
    inside = (np.sum(crosses & (x < x_at_y), axis=1) % 2) == 1

    # distance to each edge segment, for boundary inclusion
    ex = x2 - x1
    ey = y2 - y1
    seg_len2 = np.where(ex * ex + ey * ey == 0.0, 1.0, ex * ex + ey * ey)
    t = np.clip(((x - x1) * ex + (y - y1) * ey) / seg_len2, 0.0, 1.0)
    dist2 = (x1 + t * ex - x) ** 2 + (y1 + t * ey - y) ** 2
    on_edge = np.min(dist2, axis=1) <= edge_tol**2
    return inside | on_edge


def point_in_polygon(x, y, polygon, edge_tol=1e-9):
    return bool(points_in_polygon(np.array([[x, y]]), polygon, edge_tol)[0])


# ---------------------------------------------------------------------------
# mode shapes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeShape:
    """Scalar deflection shape with the second derivatives strain needs."""

    value: Callable
    d2_dy2: Callable
    d2_dxdy: Callable


_BEAM_PARAMS = (
    (1.875104068711961, 0.7340955137677562),
    (4.694091132974175, 1.0184664857794908),
)


def _beam_mode(span, which, chord_taper=0.0, x_axis=0.004, chord_ref=0.005):
    """Clamped-free beam bending shape, optionally tapered across the chord.

    A nonzero ``chord_taper`` multiplies the beam shape by a mild linear
    chordwise factor, giving the bending-dominant mode a small twist
    component the way coupled bend-twist wing modes do.
    """
    beta_l, sigma = _BEAM_PARAMS[which]
    beta = beta_l / span
    g = float(chord_taper)

    def chord_factor(x):
        return 1.0 + g * (np.asarray(x, dtype=float) - x_axis) / chord_ref

    def beam(y):
        by = beta * np.asarray(y, dtype=float)
        return np.cosh(by) - np.cos(by) - sigma * (np.sinh(by) - np.sin(by))

    def beam_d1(y):
        by = beta * np.asarray(y, dtype=float)
        return beta * (np.sinh(by) + np.sin(by) - sigma * (np.cosh(by) - np.cos(by)))

    def beam_d2(y):
        by = beta * np.asarray(y, dtype=float)
        return beta**2 * (np.cosh(by) + np.cos(by) - sigma * (np.sinh(by) + np.sin(by)))

    def value(x, y):
        return beam(y) * chord_factor(x)

    def d2_dy2(x, y):
        return beam_d2(y) * chord_factor(x)

    def d2_dxdy(x, y):
        return beam_d1(y) * (g / chord_ref) + 0.0 * np.asarray(x, dtype=float)

    return ModeShape(value=value, d2_dy2=d2_dy2, d2_dxdy=d2_dxdy)


def _torsion_mode(span, x_axis, chord_ref, exponent=2.0, linear_mix=0.15):
    """Chordwise-linear twist, tip-weighted span profile.

    Span profile (y/span)^q + m*(y/span): the small linear term keeps the
    twist rate (hence shear strain) nonzero at the root while the power
    term concentrates it at the tip.
    """
    q = float(exponent)
    m = float(linear_mix)

    def profile(y):
        return (y / span) ** q + m * (y / span)

    def value(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x - x_axis) * profile(y) / chord_ref

    def d2_dy2(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if q == 1.0:
            return np.zeros(np.broadcast(x, y).shape)
        return (x - x_axis) * q * (q - 1.0) * y ** (q - 2.0) / (span**q * chord_ref)

    def d2_dxdy(x, y):
        y = np.asarray(y, dtype=float)
        return (q * y ** (q - 1.0) / span**q + m / span) / chord_ref \
            + 0.0 * np.asarray(x, dtype=float)

    return ModeShape(value=value, d2_dy2=d2_dy2, d2_dxdy=d2_dxdy)


def _scale_mode(mode, scale):
    return ModeShape(
        value=lambda x, y: scale * mode.value(x, y),
        d2_dy2=lambda x, y: scale * mode.d2_dy2(x, y),
        d2_dxdy=lambda x, y: scale * mode.d2_dxdy(x, y),
    )


def _quadrature_points(polygon, resolution=160):
    """Midpoint-rule interior points and the shared cell area."""
    poly = np.asarray(polygon, dtype=float)
    xmin, ymin = poly.min(axis=0)
    xmax, ymax = poly.max(axis=0)
    dx = (xmax - xmin) / resolution
    dy = (ymax - ymin) / resolution
    cx = xmin + dx * (np.arange(resolution) + 0.5)
    cy = ymin + dy * (np.arange(resolution) + 0.5)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = points_in_polygon(pts, poly, edge_tol=0.0)
    return pts[keep], dx * dy


def builtin_modes(polygon, density, n_m, x_axis=0.004, chord_ref=0.005,
                  torsion_exponent=2.0, torsion_linear_mix=0.15,
                  bending_chord_taper=0.0):
    """Assumed modes normalized to unit modal mass over the planform.

    Mode 1 is spanwise bending (clamped-free beam, optionally with a mild
    chordwise taper), mode 2 a torsion-like chordwise-linear shape, mode 3
    (when requested) second spanwise bending.
    """
    if n_m not in (2, 3):
        raise ValueError("builtin modes support n_m = 2 or 3")
    poly = np.asarray(polygon, dtype=float)
    span = poly[:, 1].max()
    raw = [_beam_mode(span, 0, bending_chord_taper, x_axis, chord_ref),
           _torsion_mode(span, x_axis, chord_ref, torsion_exponent, torsion_linear_mix)]
    if n_m == 3:
        raw.append(_beam_mode(span, 1, bending_chord_taper, x_axis, chord_ref))
    pts, cell = _quadrature_points(poly)
    modes = []
    for mode in raw:
        mass = density * cell * float(np.sum(mode.value(pts[:, 0], pts[:, 1]) ** 2))
        modes.append(_scale_mode(mode, 1.0 / math.sqrt(mass)))
    return tuple(modes)


def modes_from_grid(doc):
    """Mode shapes interpolated from a grid file via bicubic splines.

    Expected keys: ``xs``, ``ys`` (grid axes) and ``values`` (one 2-D grid
    per mode, indexed [x, y]).
    """
    from scipy.interpolate import RectBivariateSpline

    xs = np.asarray(doc["xs"], dtype=float)
    ys = np.asarray(doc["ys"], dtype=float)
    modes = []
    for grid in doc["values"]:
        spline = RectBivariateSpline(xs, ys, np.asarray(grid, dtype=float), kx=3, ky=3)
        modes.append(ModeShape(
            value=lambda x, y, s=spline: s(x, y, grid=False),
            d2_dy2=lambda x, y, s=spline: s(x, y, dx=0, dy=2, grid=False),
            d2_dxdy=lambda x, y, s=spline: s(x, y, dx=1, dy=1, grid=False),
        ))
    return tuple(modes)


# ---------------------------------------------------------------------------
# wing model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WingModel:
    """Modal wing data: frequencies, acceleration mass matrix, geometry."""

    n_m: int
    Omega: np.ndarray        # n_m x n_m diagonal, squared frequencies (rad^2/s^2)
    Ma: np.ndarray           # n_m x 3 applied-acceleration mass matrix
    x_r: float               # feathering-axis offset, m
    thickness: float         # plate thickness, m
    planform: np.ndarray     # polygon vertices, m
    modes: tuple
    density: float = 0.25    # areal density, kg/m^2

    def __post_init__(self):
        omega = np.asarray(self.Omega, dtype=float)
        if omega.shape != (self.n_m, self.n_m):
            raise ValueError("Omega must be n_m x n_m")
        if np.any(omega - np.diag(np.diag(omega)) != 0.0) or np.any(np.diag(omega) < 0):
            raise ValueError("Omega must be diagonal with nonnegative entries")
        ma = np.asarray(self.Ma, dtype=float)
        if ma.shape != (self.n_m, 3):
            raise ValueError("Ma must be n_m x 3")
        poly = np.asarray(self.planform, dtype=float)
        if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
            raise ValueError("planform must be a polygon with >= 3 vertices")
        if len(self.modes) != self.n_m:
            raise ValueError("need one mode shape per modal coordinate")
        object.__setattr__(self, "Omega", omega)
        object.__setattr__(self, "Ma", ma)
        object.__setattr__(self, "planform", poly)
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def n(self):
        """State dimension: eta, eta_dot, and the three rotation rates."""
        return 2 * self.n_m + 3

    @cached_property
    def omega_diag(self):
        return np.diag(self.Omega).copy()

    @property
    def rate_indices(self):
        """State indices of (P, Q, R)."""
        return tuple(range(2 * self.n_m, 2 * self.n_m + 3))


def _acceleration_mass_matrix(modes, polygon, density):
    """Modal projections of the basis fields [1, y, x] over the planform."""
    pts, cell = _quadrature_points(np.asarray(polygon, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    ma = np.zeros((len(modes), 3))
    for i, mode in enumerate(modes):
        phi = mode.value(x, y)
        ma[i, 0] = density * cell * float(np.sum(phi))
        ma[i, 1] = density * cell * float(np.sum(phi * y))
        ma[i, 2] = density * cell * float(np.sum(phi * x))
    return ma


def load_model(source=None):
    """Build a WingModel from a JSON document, path, or dict.

    With no argument the packaged hawkmoth-like default model is loaded.
    ``Ma`` may be omitted, in which case it is computed by quadrature of the
    assumed modes over the planform with uniform areal density.
    """
    if source is None:
        source = resources.files("obskit.data").joinpath("hawkmoth_planform.json").read_text()
        doc = json.loads(source)
    elif isinstance(source, dict):
        doc = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)

    n_m = int(doc["n_m"])
    planform = np.asarray(doc["planform"], dtype=float)
    density = float(doc.get("density", 0.25))
    modes_spec = doc.get("modes", "builtin:n2")
    if modes_spec == f"builtin:n{n_m}":
        opts = doc.get("mode_options", {})
        modes = builtin_modes(planform, density, n_m,
                              x_axis=float(opts.get("x_axis", 0.004)),
                              chord_ref=float(opts.get("chord_ref", 0.005)),
                              torsion_exponent=float(opts.get("torsion_exponent", 2.0)),
                              torsion_linear_mix=float(opts.get("torsion_linear_mix", 0.15)),
                              bending_chord_taper=float(opts.get("bending_chord_taper", 0.0)))
    elif modes_spec.startswith("builtin:"):
        raise ValueError(f"modes spec {modes_spec!r} does not match n_m={n_m}")
    elif modes_spec.startswith("file:"):
        with open(modes_spec[5:], "r", encoding="utf-8") as fh:
            modes = modes_from_grid(json.load(fh))
        if len(modes) != n_m:
            raise ValueError("mode grid count does not match n_m")
    else:
        raise ValueError(f"unknown modes spec {modes_spec!r}")

    if "Ma" in doc:
        ma = np.asarray(doc["Ma"], dtype=float)
    else:
        ma = _acceleration_mass_matrix(modes, planform, density)

    return WingModel(
        n_m=n_m,
        Omega=np.diag(np.asarray(doc["Omega_diag"], dtype=float)),
        Ma=ma,
        x_r=float(doc["x_r"]),
        thickness=float(doc["thickness"]),
        planform=planform,
        modes=modes,
        density=density,
    )


def default_veins():
    """Packaged approximate vein polylines for the default planform."""
    text = resources.files("obskit.data").joinpath("hawkmoth_veins.json").read_text()
    return [np.asarray(v, dtype=float) for v in json.loads(text)["veins"]]


# ---------------------------------------------------------------------------
# stroke kinematics and body rates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrokeParams:
    """Nominal flapping-cycle amplitudes and period."""

    A_psi: float = math.pi / 4.0        # stroke position amplitude, rad
    A_alpha: float = math.pi / 3.0      # feathering amplitude, rad
    T_beat: float = 0.040               # wing-beat period, s

    def __post_init__(self):
        if self.T_beat <= 0:
            raise ValueError("T_beat must be positive")


class StrokeState(NamedTuple):
    psi: float
    theta: float
    alpha: float
    dpsi: float
    dtheta: float
    dalpha: float
    ddpsi: float
    ddtheta: float
    ddalpha: float


def stroke_kinematics(t, params):
    """Euler angles of the nominal cycle and their first two time derivatives.

    psi sweeps as a negative cosine, theta stays zero, and alpha feathers
    through a tanh-shaped flip about the quarter strokes.
    """
    w = 2.0 * math.pi / params.T_beat
    t = np.asarray(t, dtype=float)
    s = np.sin(w * t)
    c = np.cos(w * t)

    psi = -params.A_psi * c
    dpsi = params.A_psi * w * s
    ddpsi = params.A_psi * w * w * c

    half_pi = 0.5 * math.pi
    u = np.tanh(half_pi * s)
    sech2 = 1.0 - u * u
    alpha = half_pi - params.A_alpha * u
    dalpha = -params.A_alpha * sech2 * half_pi * w * c
    ddalpha = params.A_alpha * half_pi * w * w * sech2 * (2.0 * u * half_pi * c * c + s)

    zero = np.zeros_like(psi)
    return StrokeState(psi, zero, alpha, dpsi, zero, dalpha, ddpsi, zero, ddalpha)


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _drot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def wing_rotation(stroke):
    """Rotation matrix mapping plate coordinates into the wing frame.

    Sequence: position angle about z, elevation about the new x, feathering
    about the final y.
    """
    return _rot_z(stroke.psi) @ _rot_x(stroke.theta) @ _rot_y(stroke.alpha)


def body_rates_from_euler(stroke):
    """Plate-frame rotation rates (P, Q, R) and accelerations from the angles.

    Each Euler-angle rate is mapped through the rotations that follow it in
    the sequence; accelerations come from the analytic product-rule
    expansion of that composition.
    """
    ez = np.array([0.0, 0.0, 1.0])
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])

    rx_t = _rot_x(stroke.theta).T
    ry_t = _rot_y(stroke.alpha).T
    drx_t = _drot_x(stroke.theta).T
    dry_t = _drot_y(stroke.alpha).T

    omega = ry_t @ (rx_t @ (stroke.dpsi * ez) + stroke.dtheta * ex) + stroke.dalpha * ey

    omega_dot = (
        stroke.dalpha * dry_t @ (rx_t @ (stroke.dpsi * ez) + stroke.dtheta * ex)
        + ry_t @ (stroke.dtheta * drx_t @ (stroke.dpsi * ez)
                  + rx_t @ (stroke.ddpsi * ez)
                  + stroke.ddtheta * ex)
        + stroke.ddalpha * ey
    )
    return omega, omega_dot


# ---------------------------------------------------------------------------
# dynamics, deformation, strain
# ---------------------------------------------------------------------------

def wing_rhs(x, u, model):
    """Control-affine wing dynamics.

    State layout [eta, eta_dot, P, Q, R]; input u = (Pdot, Qdot, Rdot).
    The modal stiffness softens with the in-plane rotation rates,
    K = Omega - (P^2 + Q^2) I.
    """
    nm = model.n_m
    eta = x[:nm]
    eta_dot = x[nm:2 * nm]
    p, q, r = x[2 * nm:2 * nm + 3]
    m1 = model.Ma[:, 0]
    m2 = model.Ma[:, 1]
    m3 = model.Ma[:, 2]

    k_diag = model.omega_diag - (p * p + q * q)
    acc = -(k_diag * eta) + (2.0 * m1 * model.x_r + m3) * (p * r) - m2 * (q * r)
    acc = acc - m2 * u[0] - (m1 * model.x_r + m3) * u[1]

    out = np.empty(2 * nm + 3)
    out[:nm] = eta_dot
    out[nm:2 * nm] = acc
    out[2 * nm:] = u
    return out


def deformation(x_p, y_p, eta, model):
    """Out-of-plane deflection at a planform point for modal coordinates eta."""
    if not point_in_polygon(x_p, y_p, model.planform):
        raise GeometryError(f"point ({x_p}, {y_p}) lies outside the planform")
    eta = np.asarray(eta, dtype=float)
    return float(sum(eta[i] * model.modes[i].value(x_p, y_p) for i in range(model.n_m)))


def strain_basis(model, xs, ys, kind):
    """Per-mode strain coefficients at stations; strain = eta @ basis.

    Thin-plate surface strain at the top fiber z = thickness/2:
    bending uses the spanwise curvature, shear the mixed curvature.
    """
    if kind == "bending":
        deriv = [m.d2_dy2 for m in model.modes]
    elif kind == "shear":
        deriv = [m.d2_dxdy for m in model.modes]
    else:
        raise ValueError(f"unknown strain kind {kind!r}")
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    factor = -0.5 * model.thickness
    return np.stack([factor * np.asarray(d(xs, ys), dtype=float) for d in deriv])


def surface_strain(x_p, y_p, eta, model, kind):
    """Surface strain of the deformed plate at one planform point."""
    if not point_in_polygon(x_p, y_p, model.planform):
        raise GeometryError(f"point ({x_p}, {y_p}) lies outside the planform")
    basis = strain_basis(model, np.array([x_p]), np.array([y_p]), kind)
    return float(np.asarray(eta, dtype=float) @ basis[:, 0])


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WingTrajectory:
    ts: np.ndarray
    states: np.ndarray   # (T, n)
    angles: np.ndarray   # (T, 3): psi, theta, alpha

    def eta(self, model):
        return self.states[:, :model.n_m]

    def rates(self, model):
        return self.states[:, 2 * model.n_m:2 * model.n_m + 3]


def kinematic_input(params):
    """Input schedule u(t) = (Pdot, Qdot, Rdot) of the nominal stroke."""

    def u_of_t(t):
        _, omega_dot = body_rates_from_euler(stroke_kinematics(t, params))
        return omega_dot

    return u_of_t


def initial_rates(params, t0=0.0):
    omega, _ = body_rates_from_euler(stroke_kinematics(t0, params))
    return omega


def simulate_wing(model, params, x0, t0, t1, step=None):
    """Integrate the wing under the nominal stroke kinematics.

    ``x0 = None`` starts from the periodic steady state of the modal
    subsystem.  Returns the trajectory sampled on the integration grid with
    the stroke angles attached.
    """
    if step is None:
        step = params.T_beat / 400.0
    if x0 is None:
        x0 = periodic_initial_state(model, params, step, t0)
    u_of_t = kinematic_input(params)

    def rhs(t, x):
        return wing_rhs(x, u_of_t(t), model)

    ts, states = integrate_rk4(rhs, x0, t0, t1, step)
    stroke = stroke_kinematics(ts, params)
    angles = np.column_stack([stroke.psi, stroke.theta, stroke.alpha])
    return WingTrajectory(ts=ts, states=states, angles=angles)


def periodic_initial_state(model, params, step=None, t0=0.0):
    """Initial state whose modal response repeats every beat.

    The modal subsystem is linear time-varying once the rates follow the
    nominal kinematics, so the beat-to-beat map is affine; its fixed point
    is found from one zero-start simulation plus one per modal basis
    vector.
    """
    if step is None:
        step = params.T_beat / 400.0
    nz = 2 * model.n_m
    rates0 = initial_rates(params, t0)
    u_of_t = kinematic_input(params)

    def rhs(t, x):
        return wing_rhs(x, u_of_t(t), model)

    def beat_map(z0):
        x0 = np.concatenate([z0, rates0])
        _, states = integrate_rk4(rhs, x0, t0, t0 + params.T_beat, step)
        return states[-1, :nz]

    base = beat_map(np.zeros(nz))
    phi = np.zeros((nz, nz))
    for i in range(nz):
        e = np.zeros(nz)
        e[i] = 1.0
        phi[:, i] = beat_map(e) - base
    z_star = np.linalg.solve(np.eye(nz) - phi, base)
    return np.concatenate([z_star, rates0])
