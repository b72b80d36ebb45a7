"""Command-line front end: ``gkdv-blowup <subcommand> ...``.

Every subcommand writes a JSON report (validated against the schemas in
:mod:`gkdv_blowup.schemas`) and, where there are time series or samples,
CSV files next to it. Exit status: 0 on success, 1 on a domain error, 2 on
a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml
from scipy.special import gamma as gamma_fn

from . import __version__
from .errors import GKdVError, RegimeError
from .grid import Field, Grid
from .groundstate import (CriticalData, GroundState, apply_lambda, apply_linearized,
                          l1_l2_ratio)
from .modulation import (BubbleParams, DecompositionTracker, decompose, modulation_residuals,
                         synthesize)
from .pde import CSV_COLUMNS, EvolutionConfig, evolve
from .placement import (PDEPlacementRunner, PlacementProblem, ReducedPlacementRunner,
                        estimate_blowup_data, face_check, place)
from .profile import find_bc, localized_profile, solve_profile
from .schemas import validate_config, validate_report
from .sync import BandPolicy, InitialData, PDERunner, ReducedRunner, solve_sync

log = logging.getLogger(__name__)


class UsageError(Exception):
    """Bad flags or a malformed configuration (exit status 2)."""


# ----------------------------------------------------------------------------
# helpers


def _floats(text, name):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--{name} expects comma-separated numbers") from exc
    if not vals:
        raise UsageError(f"--{name} is empty")
    return vals


def _load_config(path, command):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"malformed config {path}: {exc}") from exc
    if cfg is None:
        cfg = {}
    try:
        validate_config(command, cfg)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"invalid config {path}: {exc.message}") from exc
    return cfg


def _derived(value, operation):
    return {"value": value, "operation": operation}


def _report(command, config, status="ok"):
    return {"command": command, "version": __version__, "status": status, "config": config,
            "derived": {}, "files": {}}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


class _Output:
    """Report destination: ``<stem>.json`` plus ``<stem>.<name>.csv`` files,
    or stdout when no path is given (CSV files are then skipped)."""

    def __init__(self, out):
        if out is None:
            self.stem = None
        else:
            path = Path(out)
            self.stem = path.with_suffix("") if path.suffix == ".json" else path
            self.stem.parent.mkdir(parents=True, exist_ok=True)

    def csv(self, report, name, header, rows):
        if self.stem is None:
            return
        path = Path(f"{self.stem}.csv" if name == "" else f"{self.stem}.{name}.csv")
        _write_csv(path, header, rows)
        report["files"][name or "series"] = str(path)

    def finish(self, report):
        validate_report(report["command"], report)
        text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
        if self.stem is None:
            print(text)
        else:
            Path(f"{self.stem}.json").write_text(text + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


# ----------------------------------------------------------------------------
# subcommands


def cmd_groundstate(args):
    p = args.p
    gs = GroundState(p)
    cd = CriticalData(p)
    y = np.linspace(-20, 20, 201)
    fine = Grid(-40.0, 40.0, 4096, periodic=True)   # spectral derivatives
    interior = np.abs(fine.x) < 20
    report = _report("groundstate", {"p": p, "check_identities": args.check_identities,
                                     "seed": args.seed})
    ratio = l1_l2_ratio(p, Grid(-40.0, 40.0, 8001))
    checks = {"ode_residual": float(np.max(np.abs(gs.ode_residual(y))))}
    if args.check_identities:
        q_dy = Field(fine, gs.dy(fine.x))
        lq = Field(fine, gs.lam(fine.x))
        checks["L_dQ"] = float(np.max(np.abs(apply_linearized(q_dy, p).values[interior])))
        checks["L_LambdaQ_plus_2Q"] = float(np.max(np.abs(
            (apply_linearized(lq, p).values + 2 * gs(fine.x))[interior])))
        checks["integration_by_parts"] = _ibp_check(p, cd.sigma_c, args.seed)
    report["checks"] = checks
    d = report["derived"]
    d["sigma_c"] = _derived(cd.sigma_c, "CriticalData.sigma_c")
    d["Q_at_0"] = _derived(float(gs(np.array([0.0]))[0]), "ground_state")
    d["l2_l1_ratio"] = _derived(ratio, "l1_l2_ratio")
    if p == 5:
        d["l2_l1_ratio_closed_form"] = _derived(4 * math.pi**2 / gamma_fn(0.25) ** 4,
                                                "4 pi^2 / Gamma(1/4)^4")
    tol = {"ode_residual": 1e-10, "L_dQ": 1e-8, "L_LambdaQ_plus_2Q": 1e-8,
           "integration_by_parts": 1e-8}
    ok = all(v < tol[k] for k, v in checks.items())
    report["status"] = "ok" if ok else "check-failed"
    _Output(args.out).finish(report)
    return 0 if ok else 1


def _ibp_check(p, sigma_c, seed, trials=10):
    """max |(Lambda f, g) + (f, Lambda g + 2 sigma_c g)| over random smooth bumps."""
    rng = np.random.default_rng(seed)
    grid = Grid(-30.0, 30.0, 6001)
    y = grid.x
    worst = 0.0
    for _ in range(trials):
        f, g = (Field(grid, sum(a * np.exp(-((y - c) / w) ** 2) for a, c, w in
                                zip(rng.normal(size=3), rng.uniform(-8, 8, 3),
                                    rng.uniform(0.8, 3, 3)))) for _ in range(2))
        lhs = apply_lambda(f, p).inner(g) + f.inner(apply_lambda(g, p) + 2 * sigma_c * g)
        worst = max(worst, abs(lhs))
    return worst


def cmd_profile(args):
    if not args.find_bc and args.b is None:
        raise UsageError("profile needs --b or --find-bc")
    report = _report("profile", {"p": args.p, "b": args.b, "find_bc": args.find_bc,
                                 "h": args.h})
    curve = None
    if args.find_bc:
        bc, sol, curve = find_bc(args.p, h=args.h)
        report["derived"]["b_c"] = _derived(bc, "find_bc")
        report["derived"]["gamma"] = _derived(sol.gamma, "find_bc")
        report["derived"]["dgamma_db"] = _derived(curve.C_p, "find_bc")
    if args.b is not None:
        sol = solve_profile(args.p, args.b)
        report["derived"]["gamma"] = _derived(sol.gamma, "solve_profile")
    report["solution"] = sol.to_dict()
    report["curve"] = curve.to_dict() if curve is not None else None
    out = _Output(args.out)
    out.csv(report, "", ["y", "v"], zip(sol.grid.x, sol.v.values))
    out.finish(report)
    return 0


def _grid_from_config(g, periodic=True):
    if "n" in g:
        return Grid(float(g["x_min"]), float(g["x_max"]), int(g["n"]), periodic)
    if "h" in g:
        return Grid.covering(g["x_min"], g["x_max"], g["h"], periodic, fft_friendly=True)
    raise UsageError("grid needs n or h")


def _bubbles(specs, b_c):
    return [BubbleParams(float(s["lambda"]), b_c if s["b"] == "b_c" else float(s["b"]),
                         float(s["x"])) for s in specs]


def cmd_evolve(args):
    cfg = _load_config(args.config, "evolve")
    if not cfg:
        raise UsageError("evolve needs --config")
    p = float(cfg["p"])
    grid = _grid_from_config(cfg["grid"])
    time_cfg, stop, sponge = cfg.get("time", {}), cfg.get("stop", {}), cfg.get("sponge", {})
    ecfg = EvolutionConfig(p=p, grid=grid, t_end=float(cfg["t_end"]),
                           dt=time_cfg.get("dt"), safety=time_cfg.get("safety", 0.5),
                           cfl=time_cfg.get("cfl", 0.5), dt_max=time_cfg.get("dt_max", 1e-2),
                           min_scale=stop.get("min_scale"), grad_cap=stop.get("grad_cap"),
                           max_steps=stop.get("max_steps", 10_000_000),
                           sponge_width=sponge.get("width", 0.0),
                           sponge_strength=sponge.get("strength", 1.0),
                           sample_every=cfg.get("sample_every", 10))
    init = cfg["initial"]
    observers, tracker, profile = [], None, None
    x = grid.x
    if init["type"] == "soliton":
        c, x0 = init.get("c", 1.0), init.get("x0", 0.0)
        u0 = Field(grid, c ** (1 / (p - 1)) * GroundState(p)(np.sqrt(c) * (x - x0)))
    elif init["type"] == "airy":
        mode = init.get("mode", 1)
        u0 = Field(grid, init.get("amplitude", 1.0) * np.cos(2 * np.pi * mode *
                                                             (x - grid.x_min) / grid.length))
    else:
        profile = localized_profile(p)
        bubbles = _bubbles(init["bubbles"], profile.b_c)
        u0 = synthesize(bubbles, profile, grid)
        track = cfg.get("track", {})
        tracker = DecompositionTracker(profile, bubbles, rel_change=track.get("rel_change", 1e-3),
                                       functionals=track.get("functionals", True))
        observers.append(tracker)
    run = evolve(u0, ecfg, observers)
    report = _report("evolve", cfg, run.status)
    report["run"] = {k: v for k, v in run.to_dict().items() if k != "config"}
    d = report["derived"]
    d["mass_drift"] = _derived(run.drift("mass"), "invariants")
    d["energy_drift"] = _derived(run.drift("energy"), "invariants")
    out = _Output(args.report)
    out.csv(report, "", list(CSV_COLUMNS), run.csv_rows())
    if tracker is not None and len(tracker.points) >= 3:
        _tracked_outputs(report, out, tracker, profile)
    out.finish(report)
    return 0


def _tracked_outputs(report, out, tracker, profile):
    d = report["derived"]
    d["b_c"] = _derived(profile.b_c, "find_bc")
    residuals = modulation_residuals(tracker.points)
    t, lam, b, x = tracker.series()
    for j, res in enumerate(residuals):
        N = [pt.N[j] if pt.N else float("nan") for pt in tracker.points]
        F = [pt.F[j] if pt.F else float("nan") for pt in tracker.points]
        rows = zip(t, res.s, lam[j], b[j], x[j], N, F, res.scale, res.translation, res.drift)
        out.csv(report, f"bubble{j + 1}", ["t", "s", "lambda", "b", "x", "N", "F",
                                           "res_scale", "res_translation", "res_drift"], rows)
        d[f"max_scale_residual_{j + 1}"] = _derived(float(np.max(np.abs(res.scale))),
                                                    "modulation_residuals")
    try:
        est = estimate_blowup_data(tracker)
    except RegimeError as exc:
        report["notes"] = str(exc)
        return
    d["T_est"] = _derived(est.T, "estimate_blowup_data")
    d["x_T_est"] = _derived(est.x.tolist(), "estimate_blowup_data")
    d["lambda3_slope"] = _derived(est.slopes.tolist(), "estimate_blowup_data")
    d["fit_r2"] = _derived(est.r2.tolist(), "estimate_blowup_data")


def _pde_layout(cfg, k, b_c):
    """Equal-spaced centers and a periodic box holding them with margins."""
    sep = cfg.get("separation", 8.0 / b_c)
    margin = cfg.get("margin", 70.0)
    xs = [j * sep for j in range(k)]
    grid = Grid.covering(-2.0 / b_c - margin, xs[-1] + 3.0 / b_c + margin,
                         cfg.get("h", 0.03), periodic=True, fft_friendly=True)
    return xs, grid


def default_b(b_c, k):
    """b_j = b_c (1 + 0.1 j b_c): distinct, within b_c^2 of b_c."""
    return [b_c * (1 + 0.1 * j * b_c) for j in range(1, k + 1)]


def _brackets(cfg):
    return {int(j) - 1: tuple(v) for j, v in cfg.get("brackets", {}).items()}


def cmd_sync(args):
    cfg = _load_config(args.config, "sync")
    k = args.k
    lam1 = args.lambda1 if args.lambda1 is not None else cfg.get("lambda1", 1.0)
    b = _floats(args.b, "b") if args.b is not None else cfg.get("b")
    if args.runner == "reduced":
        if b is None:
            raise UsageError("the reduced runner needs --b")
        if len(b) != k:
            raise UsageError(f"--b needs {k} values")
        model = args.model or cfg.get("model", "formal")
        b_c = cfg.get("b_c", min(b))
        runner = ReducedRunner(model, b_c, floor=cfg.get("floor", 1e-6))
        xs = [0.0] * k
    else:
        profile = localized_profile(cfg.get("p", args.p))
        b_c = profile.b_c
        b = b or default_b(b_c, k)
        if len(b) != k:
            raise UsageError(f"--b needs {k} values")
        xs, grid = _pde_layout(cfg, k, b_c)
        runner = PDERunner(profile, grid, cfg.get("collapse", 3.0))
    template = InitialData([lam1] + [lam1] * (k - 1), b, xs)
    res = solve_sync(template, runner, BandPolicy(k), _brackets(cfg),
                     rel_tol=cfg.get("rel_tol"))
    config = dict(cfg, k=k, runner=args.runner, b=list(b), lambda1=lam1)
    report = _report("sync", config, res.final_class)
    report["result"] = res.to_dict()
    report["runner"] = runner.to_dict()
    d = report["derived"]
    d["scales"] = _derived(res.scales, "solve_sync")
    d["band_margin"] = _derived(res.band_margin, "solve_sync")
    out = _Output(args.out)
    tr = res.final_track
    out.csv(report, "", ["t"] + [f"lambda_{j + 1}" for j in range(k)],
            zip(tr.t, *tr.lam))
    out.finish(report)
    return 0


def cmd_place(args):
    cfg = _load_config(args.config, "place")
    targets = _floats(args.targets, "targets")
    k = len(targets)
    b = _floats(args.b, "b") if args.b is not None else cfg.get("b")
    lam1 = cfg.get("lambda1", 1.0)
    profile = None
    if args.runner == "reduced":
        b_c = args.b_c or cfg.get("b_c") or (min(b) if b else None)
        if b_c is None:
            raise UsageError("the reduced runner needs --b-c or --b")
    else:
        profile = localized_profile(cfg.get("p", args.p))
        b_c = profile.b_c
    b = b or [b_c] * k
    if len(b) != k:
        raise UsageError(f"--b needs {k} values")
    threshold = args.threshold or 8.0 / b_c
    problem = PlacementProblem.reduced(targets, threshold)
    if profile is None:
        runner = ReducedPlacementRunner(InitialData([lam1] * k, b, [0.0] * k),
                                        args.model or cfg.get("model", "formal"), b_c,
                                        floor=cfg.get("floor", 1e-2))
    else:
        xs = problem.scaled_targets
        margin = cfg.get("margin", 70.0)
        # bubbles drift to the right by about lambda/b while collapsing
        grid = Grid.covering(float(xs.min()) - 2.0 / b_c - margin,
                             float(xs.max()) + 3.0 / b_c + margin, cfg.get("h", 0.03),
                             periodic=True, fft_friendly=True)
        runner = PDEPlacementRunner(profile, grid, InitialData([lam1] * k, b, list(xs)),
                                    _brackets(cfg), cfg.get("collapse", 3.0))
    result = place(problem, runner, cfg.get("max_iter", 20), cfg.get("theta", 1.0),
                   cfg.get("tol"))
    config = dict(cfg, targets=targets, runner=args.runner, threshold=threshold, b=list(b))
    report = _report("place", config, "converged" if result.converged else "not-converged")
    report["result"] = result.to_dict()
    report["problem"] = problem.to_dict()
    d = report["derived"]
    d["residual"] = _derived(result.residual, "place")
    d["T"] = _derived(result.T, "place/estimate_blowup_data")
    ev = result.verification
    d["drift"] = _derived(problem.scaling().points(ev.estimate.drift).tolist(),
                          "estimate_blowup_data")
    d["drift_bound"] = _derived(5.0 / b_c / problem.lam_bar, "drift_bound")
    if args.face_check:
        faces, r = face_check(problem, runner)
        d["face_check"] = _derived([{"bubble": j + 1, "side": s, "deviation": v, "holds": ok}
                                    for j, s, v, ok in faces], "face_check")
        d["face_radius"] = _derived(r, "face_check")
    out = _Output(args.out)
    tr = ev.track
    out.csv(report, "verification", ["t"] + [f"lambda_{j + 1}" for j in range(k)]
            + [f"x_{j + 1}" for j in range(k)], zip(tr.t, *tr.lam, *tr.x))
    if args.runner == "pde" and runner.runner.reports:
        last = runner.runner.reports[-1]
        out.csv(report, "verification_run", list(CSV_COLUMNS), last.csv_rows())
    out.finish(report)
    return 0


def _read_state(path):
    path = Path(path)
    try:
        if path.suffix == ".npz":
            data = np.load(path)
            x, u = data["x"], data["u"]
        else:
            arr = np.loadtxt(path, delimiter=",", skiprows=1)
            x, u = arr[:, 0], arr[:, 1]
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise UsageError(f"cannot read state {path}: {exc}") from exc
    h = x[1] - x[0]
    if not np.allclose(np.diff(x), h, rtol=1e-8, atol=0):
        raise UsageError("state samples must be uniformly spaced")
    return Field(Grid(float(x[0]), float(x[-1] + h), len(x), periodic=True), u)


def _read_guess(text):
    src = Path(text)
    try:
        raw = json.loads(src.read_text()) if src.exists() else json.loads(text)
        return [BubbleParams.from_dict(d) for d in raw]
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot parse guess: {exc}") from exc


def cmd_decompose(args):
    u = _read_state(args.state)
    guess = _read_guess(args.guess)
    profile = localized_profile(args.p)
    dec = decompose(u, guess, profile, tol=args.tol)
    report = _report("decompose", {"p": args.p, "state": str(args.state), "tol": args.tol,
                                   "guess": [g.to_dict() for g in guess]})
    report["decomposition"] = dec.to_dict()
    report["derived"]["b_c"] = _derived(profile.b_c, "find_bc")
    report["derived"]["orthogonality_max"] = _derived(
        float(np.max(np.abs(dec.orthogonality))), "decompose")
    out = _Output(args.out)
    out.csv(report, "residual", ["x", "u_tilde"], zip(u.grid.x, dec.residual.values))
    out.finish(report)
    return 0


# ----------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="gkdv-blowup", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("groundstate", help="closed-form ground state and its identities")
    g.add_argument("--p", type=float, default=5.0)
    g.add_argument("--check-identities", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_groundstate)

    pr = sub.add_parser("profile", help="self-similar profile and the eigenvalue b_c")
    pr.add_argument("--p", type=float, required=True)
    pr.add_argument("--b", type=float)
    pr.add_argument("--find-bc", action="store_true")
    pr.add_argument("--h", type=float, default=0.025)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_profile)

    ev = sub.add_parser("evolve", help="time evolution from a config file")
    ev.add_argument("--config", required=True)
    ev.add_argument("--report")
    ev.set_defaults(func=cmd_evolve)

    dc = sub.add_parser("decompose", help="decompose a sampled state into bubbles")
    dc.add_argument("--state", required=True, help="CSV (x,u) or .npz with x and u")
    dc.add_argument("--guess", required=True, help="JSON list of {lambda, b, x} or a path")
    dc.add_argument("--p", type=float, default=5.1)
    dc.add_argument("--tol", type=float, default=1e-12)
    dc.add_argument("--out")
    dc.set_defaults(func=cmd_decompose)

    sy = sub.add_parser("sync", help="synchronize the collapse of k bubbles")
    sy.add_argument("--k", type=int, required=True)
    sy.add_argument("--runner", choices=["reduced", "pde"], default="reduced")
    sy.add_argument("--b", help="comma-separated b_j")
    sy.add_argument("--lambda1", type=float)
    sy.add_argument("--model", choices=["formal", "damped"])
    sy.add_argument("--p", type=float, default=5.1)
    sy.add_argument("--config")
    sy.add_argument("--out")
    sy.set_defaults(func=cmd_sync)

    pl = sub.add_parser("place", help="choose initial centers hitting a blow-up set")
    pl.add_argument("--targets", required=True)
    pl.add_argument("--runner", choices=["reduced", "pde"], default="reduced")
    pl.add_argument("--threshold", type=float)
    pl.add_argument("--b", help="comma-separated b_j")
    pl.add_argument("--b-c", type=float)
    pl.add_argument("--model", choices=["formal", "damped"])
    pl.add_argument("--p", type=float, default=5.1)
    pl.add_argument("--face-check", action="store_true")
    pl.add_argument("--config")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_place)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "k", 1) is not None and getattr(args, "k", 1) < 1:
        print("error: --k must be positive", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except GKdVError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
