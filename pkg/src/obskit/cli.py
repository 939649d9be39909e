"""Command-line front end.

Subcommands: simulate, gramian-grid, place, nla-sweep, lie-check,
linear-delay.  One JSON config document drives everything; outputs are
deterministic CSV/JSON/SVG files (byte-identical for identical config and
seed).  Exit codes: 0 success, 2 config error, 3 numeric failure, 4
infeasible optimization.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linear_delay, svgplot
from .empirical_gramian import gramian_from_output_differences
from .lie_composite import (
    EvaluationError,
    SmoothSystem,
    logistic_outer,
    observability_matrices,
    tanh_outer,
)
from .neural_encoding import EncoderParams, nla, nla_derivative, project_series
from .numerics import IntegrationDivergedError
from .placement import (
    InfeasibleStartError,
    PlacementProblem,
    SensorSite,
    optimize_placement,
    vein_sites,
)
from .placement import grid_sites as _grid_sites
from .wing_model import (
    GeometryError,
    StrokeParams,
    WingModel,
    default_veins,
    load_model,
    point_in_polygon,
    simulate_wing,
    strain_basis,
    wing_rhs,
)


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4

_DEFAULT_CONFIG = {
    "model": "builtin",
    "kinematics": {"A_psi": math.pi / 4.0, "A_alpha": math.pi / 3.0, "T_beat": 0.040},
    "encoder": {"a": 0.005, "b": 0.004, "omega_sta": 1000.0, "N": 0.040,
                "C_xi": 0.1174, "c": 10.0, "d": 0.5},
    "sim": {"step": None, "probes": [[0.004, 0.006], [0.006, 0.016]]},
    "grid": {"nx": 17, "ny": 7},
    "grid_full": {"nx": 51, "ny": 21},
    "gramian": {"epsilon": 0.001, "perturb": "rates"},
    "placement": {"r": 20, "w_nu": 20.0, "veins": "builtin",
                  "iterations": 300, "restarts": 5, "spacing": 0.002},
    "nla_sweep": {"c_values": None, "d_values": None},
    "out": "obskit_out",
    "seed": 0,
}


def _deep_merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    model: WingModel
    stroke: StrokeParams
    encoder: EncoderParams
    out_dir: str
    seed: int
    full: bool

    @property
    def step(self):
        step = self.raw["sim"].get("step")
        return float(step) if step else self.stroke.T_beat / 400.0

    def grid_shape(self):
        block = self.raw["grid_full"] if self.full else self.raw["grid"]
        return int(block["nx"]), int(block["ny"])


def load_config(path, out_override=None, seed_override=None, full=False):
    raw = dict(_DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = _deep_merge(raw, json.load(fh))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    if out_override:
        raw["out"] = out_override
    if seed_override is not None:
        raw["seed"] = int(seed_override)

    try:
        model = load_model(None if raw["model"] == "builtin" else raw["model"])
    except (OSError, KeyError, ValueError) as err:
        raise ConfigError(f"cannot load wing model: {err}") from err

    kin = raw["kinematics"]
    stroke = StrokeParams(A_psi=float(kin["A_psi"]), A_alpha=float(kin["A_alpha"]),
                          T_beat=float(kin["T_beat"]))
    enc = raw["encoder"]
    encoder = EncoderParams(a=float(enc["a"]), b=float(enc["b"]),
                            omega_sta=float(enc["omega_sta"]),
                            window=float(enc.get("N", enc.get("window", 0.040))),
                            C_xi=float(enc["C_xi"]), c=float(enc["c"]), d=float(enc["d"]))
    return RunConfig(raw=raw, model=model, stroke=stroke, encoder=encoder,
                     out_dir=raw["out"], seed=int(raw["seed"]), full=full)


# ---------------------------------------------------------------------------
# deterministic writers
# ---------------------------------------------------------------------------

def _write_text(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json_sanitize(obj):
    if isinstance(obj, dict):
        return {k: _json_sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_sanitize(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def write_json(path, payload):
    text = json.dumps(_json_sanitize(payload), indent=2, sort_keys=True) + "\n"
    _write_text(path, text)
    return text


def write_csv(path, name, columns, rows):
    lines = [f"# obskit-csv v1 {name}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def _pool_map(fn, items):
    """Ordered map over a bounded thread pool (OBSKIT_THREADS caps workers)."""
    items = list(items)
    env = os.environ.get("OBSKIT_THREADS")
    workers = int(env) if env else min(8, os.cpu_count() or 1)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# wing ensemble: nominal + perturbed trajectories with cached encodings
# ---------------------------------------------------------------------------

class WingEnsemble:
    """Shared simulation cache for station sweeps.

    One nominal two-beat trajectory plus one pair of rate-perturbed
    second-beat trajectories per rotation axis; strain and projected
    stimulus series at arbitrary stations derive from the cached modal
    coordinates by linear maps, so per-station work never re-simulates.
    """

    def __init__(self, config):
        model = config.model
        stroke = config.stroke
        step = config.step
        epsilon = float(config.raw["gramian"]["epsilon"])
        if epsilon <= 0:
            raise ConfigError("gramian.epsilon must be positive")

        t_beat = stroke.T_beat
        nominal = simulate_wing(model, stroke, None, 0.0, 2.0 * t_beat, step)
        self.model = model
        self.stroke = stroke
        self.encoder = config.encoder
        self.step = step
        self.epsilon = epsilon
        self.ts = nominal.ts
        self.nominal = nominal
        self.split = int(round(t_beat / step))

        x_mid = nominal.states[self.split]
        head = nominal.states[:self.split, :model.n_m]
        self.eta_nominal = nominal.states[:, :model.n_m]
        self.eta_pairs = []  # per rotation axis: (eta_plus, eta_minus), full series
        for state_index in model.rate_indices:
            pair = []
            for sign in (1.0, -1.0):
                x0 = x_mid.copy()
                x0[state_index] += sign * epsilon
                tail = simulate_wing(model, stroke, x0, t_beat, 2.0 * t_beat, step)
                pair.append(np.vstack([head, tail.states[:, :model.n_m]]))
            self.eta_pairs.append(tuple(pair))

    def xi_series(self, stations, kind):
        """Projected-stimulus series at the stations for every trajectory.

        Returns (xi_nominal, xi_pairs, out_slice) where series hold the
        encoder output on the valid grid and out_slice trims it to the
        post-perturbation window the Gramian integrates over.
        """
        stations = np.asarray(stations, dtype=float)
        basis = strain_basis(self.model, stations[:, 0], stations[:, 1], kind)

        def xi_of(eta):
            offset, xi = project_series(eta @ basis, self.encoder, self.step)
            return offset, xi

        offset, xi_nom = xi_of(self.eta_nominal)
        start = max(self.split - offset, 0)
        pairs = []
        for eta_plus, eta_minus in self.eta_pairs:
            pairs.append((xi_of(eta_plus)[1], xi_of(eta_minus)[1]))
        return xi_nom, pairs, slice(start, None)

    def station_gramians(self, stations, kind, encoder=None, rtol=1e-10):
        """Per-station GramianResults of the encoded output, ordered by station."""
        encoder = encoder or self.encoder
        xi_nom, xi_pairs, window = self.xi_series(stations, kind)
        del xi_nom
        deltas = np.stack([nla(xp[window], encoder) - nla(xm[window], encoder)
                           for xp, xm in xi_pairs])  # (3, T, S)

        def one(i):
            return gramian_from_output_differences(deltas[:, :, i], self.epsilon,
                                                   self.step, rtol)

        return _pool_map(one, range(deltas.shape[2]))


def _interior_grid(config):
    nx, ny = config.grid_shape()
    try:
        return _grid_sites(config.model, nx, ny)
    except GeometryError as err:
        raise ConfigError(str(err)) from err


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(config):
    model = config.model
    probes = [tuple(p) for p in config.raw["sim"]["probes"]]
    for x, y in probes:
        if not point_in_polygon(x, y, model.planform):
            raise ConfigError(f"probe ({x}, {y}) lies outside the planform")

    traj = simulate_wing(model, config.stroke, None, 0.0, 2.0 * config.stroke.T_beat,
                         config.step)
    nm = model.n_m
    columns = (["t"] + [f"eta_{i}" for i in range(nm)]
               + [f"eta_dot_{i}" for i in range(nm)]
               + ["P", "Q", "R", "psi", "theta", "alpha"])
    rows = [list(row) for row in np.column_stack([traj.ts, traj.states, traj.angles])]
    write_csv(os.path.join(config.out_dir, "trajectory.csv"), "trajectory", columns, rows)

    xs = np.array([p[0] for p in probes])
    ys = np.array([p[1] for p in probes])
    strain_cols = ["t"]
    series = [traj.ts]
    strains = {}
    for kind in ("bending", "shear"):
        basis = strain_basis(model, xs, ys, kind)
        strains[kind] = traj.states[:, :nm] @ basis
        for j in range(len(probes)):
            strain_cols.append(f"{kind}_{j}")
            series.append(strains[kind][:, j])
    write_csv(os.path.join(config.out_dir, "strain_probes.csv"), "strain-probes",
              strain_cols, [list(r) for r in np.column_stack(series)])

    enc_cols = ["t"]
    offset, xi_b = project_series(strains["bending"], config.encoder, config.step)
    _, xi_s = project_series(strains["shear"], config.encoder, config.step)
    enc_series = [traj.ts[offset:]]
    for j in range(len(probes)):
        enc_cols += [f"xi_bending_{j}", f"p_fire_bending_{j}",
                     f"xi_shear_{j}", f"p_fire_shear_{j}"]
        enc_series += [xi_b[:, j], nla(xi_b[:, j], config.encoder),
                       xi_s[:, j], nla(xi_s[:, j], config.encoder)]
    write_csv(os.path.join(config.out_dir, "encoding_probes.csv"), "encoding-probes",
              enc_cols, [list(r) for r in np.column_stack(enc_series)])
    return EXIT_OK


def cmd_gramian_grid(config, kind):
    if kind not in ("bending", "shear"):
        raise ConfigError(f"unknown strain kind {kind!r}")
    stations = _interior_grid(config)
    ensemble = WingEnsemble(config)
    results = ensemble.station_gramians(stations, kind)

    columns = ["x", "y", "lambda_1", "lambda_2", "lambda_3",
               "nu", "kappa", "det_root", "trace", "rank"]
    rows = []
    for (x, y), res in zip(stations, results):
        ev = res.eigenvalues
        rows.append([x, y, ev[0], ev[1], ev[2],
                     res.nu if math.isfinite(res.nu) else "inf",
                     res.kappa if math.isfinite(res.kappa) else "inf",
                     res.det_root, res.trace, res.rank])
    write_csv(os.path.join(config.out_dir, f"gramian_{kind}.csv"),
              f"gramian-grid-{kind}", columns, rows)

    lam_min = np.array([res.eigenvalues[0] for res in results])
    svg = svgplot.render_heatmap(config.model.planform, stations[:, 0], stations[:, 1],
                                 lam_min, f"min eigenvalue, {kind} encoding")
    _write_text(os.path.join(config.out_dir, f"heatmap_{kind}.svg"), svg)
    return EXIT_OK


def _vein_positions(config):
    spec = config.raw["placement"].get("veins", "builtin")
    if spec == "builtin":
        veins = default_veins()
    else:
        try:
            with open(spec, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read vein file {spec}: {err}") from err
        veins = [np.asarray(v, dtype=float) for v in
                 (doc["veins"] if isinstance(doc, dict) else doc)]
    return veins, vein_sites(veins, float(config.raw["placement"].get("spacing", 0.002)))


def cmd_place(config):
    pl = config.raw["placement"]
    veins, positions = _vein_positions(config)
    ensemble = WingEnsemble(config)

    sites = []
    for kind in ("bending", "shear"):
        results = ensemble.station_gramians(positions, kind)
        for (x, y), res in zip(positions, results):
            sites.append(SensorSite(x=float(x), y=float(y), kind=kind, gramian=res))

    problem = PlacementProblem(sites=tuple(sites), r=int(pl["r"]), w_nu=float(pl["w_nu"]))
    result = optimize_placement(problem, seed=config.seed,
                                iterations=int(pl.get("iterations", 300)),
                                restarts=int(pl.get("restarts", 5)))

    payload = {
        "beta": result.beta,
        "selected": [{"index": i, "x": sites[i].x, "y": sites[i].y, "kind": sites[i].kind}
                     for i in result.selected],
        "objective": result.objective,
        "objective_relaxed": result.objective_relaxed,
        "iterations": result.iterations,
        "r": problem.r,
        "w_nu": problem.w_nu,
        "n_sites": len(sites),
    }
    write_json(os.path.join(config.out_dir, "placement.json"), payload)
    svg = svgplot.render_overlay(config.model.planform, veins, sites, result.selected,
                                 f"selected sensors (r={problem.r})")
    _write_text(os.path.join(config.out_dir, "placement.svg"), svg)
    return EXIT_OK


def default_sweep_values():
    """Default NLA sweep grids; both include the experimentally derived pair."""
    c_values = sorted(set(range(1, 30, 2)) | {10})
    d_values = sorted({round(-1.0 + 0.2 * i, 10) for i in range(11)} | {0.5})
    return [float(c) for c in c_values], [float(d) for d in d_values]


def cmd_nla_sweep(config):
    sweep = config.raw["nla_sweep"]
    c_values, d_values = default_sweep_values()
    if sweep.get("c_values"):
        c_values = [float(c) for c in sweep["c_values"]]
    if sweep.get("d_values"):
        d_values = [float(d) for d in sweep["d_values"]]

    stations = _interior_grid(config)
    ensemble = WingEnsemble(config)
    xi_nom, xi_pairs, window = ensemble.xi_series(stations, "bending")
    xi_mean = float(np.mean(xi_nom))

    combos = [(c, d) for c in c_values for d in d_values]

    def evaluate(combo):
        c, d = combo
        params = EncoderParams(a=config.encoder.a, b=config.encoder.b,
                               omega_sta=config.encoder.omega_sta,
                               window=config.encoder.window,
                               C_xi=config.encoder.C_xi, c=c, d=d)
        deltas = np.stack([nla(xp[window], params) - nla(xm[window], params)
                           for xp, xm in xi_pairs])
        det_roots = np.empty(deltas.shape[2])
        for i in range(deltas.shape[2]):
            res = gramian_from_output_differences(deltas[:, :, i], ensemble.epsilon,
                                                  ensemble.step)
            det_roots[i] = res.det_root
        sens = nla_derivative(xi_mean, params) ** 2
        return float(det_roots.mean()), float(sens)

    evaluated = _pool_map(evaluate, combos)
    rows = [[c, d, mean_det, sens]
            for (c, d), (mean_det, sens) in zip(combos, evaluated)]
    write_csv(os.path.join(config.out_dir, "nla_sweep.csv"), "nla-sweep",
              ["c", "d", "mean_det_root", "sensitivity_sq"], rows)

    det_col = np.array([r[2] for r in rows])
    sens_col = np.array([r[3] for r in rows])
    rho = float(np.corrcoef(det_col, sens_col)[0, 1])
    by_d = {}
    for c, d, mean_det, _ in rows:
        by_d.setdefault(d, []).append(mean_det)
    d_means = {d: float(np.mean(v)) for d, v in by_d.items()}
    best_d = min(d_means, key=lambda d: (-d_means[d], abs(d)))
    report = {
        "correlation": rho,
        "n_combos": len(rows),
        "xi_spatiotemporal_mean": xi_mean,
        "best_d": best_d,
        "d_means": {repr(d): m for d, m in sorted(d_means.items())},
    }
    write_json(os.path.join(config.out_dir, "nla_sweep_report.json"), report)
    return EXIT_OK


def _builtin_lie_system(config, name):
    if name == "double-integrator-tanh":
        return SmoothSystem(
            f0=lambda x: np.array([x[1], 0.0]),
            h=lambda x: float(x[0]),
            g=tanh_outer(),
            dim=2,
        ), np.array([0.5, -0.3])
    if name == "wing-autonomous":
        model = config.model
        probe = tuple(config.raw["sim"]["probes"][0])
        if not point_in_polygon(probe[0], probe[1], model.planform):
            raise ConfigError(f"probe {probe} lies outside the planform")
        basis = strain_basis(model, np.array([probe[0]]), np.array([probe[1]]),
                             "bending")[:, 0]
        enc = config.encoder

        def h(x):
            return float(x[:model.n_m] @ basis)

        x_default = np.zeros(model.n)
        x_default[:model.n_m] = 1e-3
        x_default[model.n_m:2 * model.n_m] = 1e-2
        x_default[2 * model.n_m:] = (5.0, -3.0, 2.0)
        return SmoothSystem(
            f0=lambda x: wing_rhs(x, np.zeros(3), model),
            h=h,
            g=logistic_outer(slope=enc.c, half_max=enc.d),
            dim=model.n,
            t_step=4e-4,
        ), x_default
    raise ConfigError(f"unknown built-in system {name!r}")


def cmd_lie_check(config, system_name, state_text):
    sys_obj, x_default = _builtin_lie_system(config, system_name)
    if state_text:
        x = np.array([float(v) for v in state_text.split(",")])
        if x.size != sys_obj.dim:
            raise ConfigError(f"state needs {sys_obj.dim} components, got {x.size}")
    else:
        x = x_default
    res = observability_matrices(sys_obj, x)
    payload = {
        "system": system_name,
        "state": x,
        "det_h": res.det_h,
        "det_goh": res.det_goh,
        "rank_h": res.rank_h,
        "rank_goh": res.rank_goh,
        "g_prime": res.g_prime,
        "theorem_residual": res.residual,
        "ratio_check": res.ratio_check,
    }
    text = write_json(os.path.join(config.out_dir, "lie_check.json"), payload)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_linear_delay(config, system_path):
    spec = system_path or config.raw.get("linear_delay", {}).get("system")
    if spec is None:
        raise ConfigError("linear-delay needs --system or a linear_delay.system entry")
    try:
        system = linear_delay.load_system(spec)
    except (OSError, ValueError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot load linear-delay system: {err}") from err
    payload = linear_delay.analyze(system)
    text = write_json(os.path.join(config.out_dir, "linear_delay.json"), payload)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="obskit",
                                     description="observability analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "gramian-grid", "place", "nla-sweep",
                 "lie-check", "linear-delay"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="JSON config document")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--full", action="store_true",
                         help="paper-scale grids instead of desk-scale")
        if name == "gramian-grid":
            cmd.add_argument("--kind", default="bending", choices=["bending", "shear"])
        if name == "lie-check":
            cmd.add_argument("--system", default="double-integrator-tanh",
                             choices=["double-integrator-tanh", "wing-autonomous"])
            cmd.add_argument("--state", default=None,
                             help="comma-separated state vector")
        if name == "linear-delay":
            cmd.add_argument("--system", default=None,
                             help="path to the system JSON document")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, out_override=args.out,
                             seed_override=args.seed, full=args.full)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "gramian-grid":
            return cmd_gramian_grid(config, args.kind)
        if args.command == "place":
            return cmd_place(config)
        if args.command == "nla-sweep":
            return cmd_nla_sweep(config)
        if args.command == "lie-check":
            return cmd_lie_check(config, args.system, args.state)
        if args.command == "linear-delay":
            return cmd_linear_delay(config, args.system)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleStartError as err:
        print(f"infeasible optimization: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (IntegrationDivergedError, EvaluationError, ArithmeticError,
            np.linalg.LinAlgError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
