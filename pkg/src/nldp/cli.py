"""Command-line front end: ``nldp solve|verify|oracle|compare``.

Exit codes: 0 pass, 2 validation error, 3 simulation error, 4 check failed.
Every CSV is written next to a ``<out>.manifest.json`` recording the config
digest, seed and simulation parameters.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as E
from . import oracle_fd as O
from .config import LoadedConfig, load_config
from .errors import NLDPError, ValidationError
from .problem import require_valid, validation_halo

EXIT_OK, EXIT_VALIDATION, EXIT_SIMULATION, EXIT_CHECK = 0, 2, 3, 4
VERIFY_CHOICES = ("prop23", "resolvent_identity", "exit_scaling", "kato_decay", "alpha_decay", "conservative")


def fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    """Write atomically so a failed run never leaves a partial file."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _manifest(path: Path, args, loaded: LoadedConfig, cfg, started: float, checks: dict, extra: dict | None = None):
    sim = {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(cfg).items()}
    data = {
        "operation": args.command,
        "config_path": str(args.config),
        "config_digest": "sha256:" + loaded.digest,
        "master_seed": args.seed,
        "n_paths": getattr(args, "paths", None),
        "sim": sim,
        "version": __version__,
        "wall_time_s": time.perf_counter() - started,
        "checks": checks,
        "passed": all(checks.values()),
    }
    if extra:
        data.update(extra)
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=float)


def _points(args, loaded: LoadedConfig) -> np.ndarray:
    if args.points:
        try:
            rows = [[float(c) for c in p.split(",")] for p in args.points.split(";") if p.strip()]
        except ValueError as exc:
            raise ValidationError(f"--points: {exc}") from exc
        return np.asarray(rows, dtype=float).reshape(-1, loaded.spec.dim)
    if loaded.points is not None:
        return loaded.points
    lo, hi = loaded.spec.domain.bounding_box
    return (0.5 * (lo + hi))[None, :]


def _sim_cfg(args, loaded):
    cfg = loaded.sim
    if args.dt is not None:
        cfg = cfg.with_(dt_base=args.dt)
    return cfg


def _vget(loaded, key, default):
    return loaded.verify.get(key, default)


# --------------------------------------------------------------- subcommands


def cmd_solve(args) -> int:
    started = time.perf_counter()
    loaded = load_config(args.config)
    spec = loaded.spec
    require_valid(spec)
    cfg = _sim_cfg(args, loaded)
    pts = _points(args, loaded)
    results = E.solve_dirichlet(spec, pts, args.paths, cfg, args.seed, workers=args.workers)
    d = spec.dim
    header = ["point_id", *(f"x{k + 1}" for k in range(d)), "mean", "stderr", "ci_lo", "ci_hi", "mean_exit_time",
              "mean_jumps", "nonexit_count"]
    rows, max_principle = [], True
    for i, (x, est) in enumerate(results):
        lo, hi = est.ci95
        rows.append([i, *map(fmt, x), fmt(est.mean), fmt(est.stderr), fmt(lo), fmt(hi),
                     fmt(est.aux["mean_exit_time"]), fmt(est.aux["mean_jumps"]), est.aux["nonexit_count"]])
        max_principle &= est.aux["phi_min"] <= est.mean <= est.aux["phi_max"]
    out = Path(args.out)
    _write_csv(out, header, rows)
    bj = max(e.aux["boundary_jump_fraction"] for _, e in results)
    _manifest(out, args, loaded, cfg, started, {"maximum_principle": bool(max_principle)},
              {"max_boundary_jump_fraction": bj})
    return EXIT_OK if max_principle else EXIT_CHECK


def _identity_rows(pts, reports):
    rows = []
    for i, (x, r) in enumerate(zip(pts, reports)):
        rows.append([i, *map(fmt, x), fmt(r.lhs.mean), fmt(r.lhs.stderr), fmt(r.rhs.mean), fmt(r.rhs.stderr),
                     fmt(r.z_score), int(r.passed)])
    return rows


def cmd_verify(args) -> int:
    started = time.perf_counter()
    loaded = load_config(args.config)
    spec = loaded.spec
    require_valid(spec)
    cfg = _sim_cfg(args, loaded)
    d = spec.dim
    n = args.paths
    alpha = args.alpha if args.alpha is not None else float(_vget(loaded, "alpha", 1.0))
    threshold = float(_vget(loaded, "threshold", 3.0))
    pts = np.asarray(_vget(loaded, "points", None) if "points" in loaded.verify else _points(args, loaded),
                     dtype=float).reshape(-1, d)
    which = args.which
    extra: dict = {"which": which}
    coords = [f"x{k + 1}" for k in range(d)]
    id_header = ["point_id", *coords, "lhs_mean", "lhs_stderr", "rhs_mean", "rhs_stderr", "z_score", "pass"]

    if which == "prop23":
        phi = _vget(loaded, "phi", spec.boundary.phi)
        reports = E.check_prop_2_3(spec, phi, alpha, pts, n, cfg, args.seed, sup_phi=_vget(loaded, "phi_bound", None),
                                   threshold=threshold, workers=args.workers)
        header, rows = id_header, _identity_rows(pts, reports)
        checks = {f"point_{i}": r.passed for i, r in enumerate(reports)}
    elif which == "resolvent_identity":
        f = _vget(loaded, "f", None)
        if f is None:
            raise ValidationError("verify.f is required for resolvent_identity")
        reports = E.check_resolvent_identity(spec, f, alpha, pts, n, cfg, args.seed,
                                             inner_paths=_vget(loaded, "inner_paths", None),
                                             sup_f=_vget(loaded, "f_bound", None), threshold=threshold,
                                             workers=args.workers)
        header, rows = id_header, _identity_rows(pts, reports)
        checks = {f"point_{i}": r.passed for i, r in enumerate(reports)}
    elif which == "exit_scaling":
        radii = [float(r) for r in _vget(loaded, "radii", [0.4, 0.2, 0.1])]
        center = _vget(loaded, "center", pts[0].tolist())
        res = E.exit_time_scaling(spec.replace(jumps=None), center, radii, n, cfg, args.seed, workers=args.workers)
        rows_sorted = sorted(res.rows, key=lambda t: t[0])
        r0, e0 = rows_sorted[0]
        c0 = e0.mean / r0**2
        header = ["radius", "mean", "stderr", "n_paths", "c0_bound", "pass"]
        rows, ok = [], True
        for r, e in res.rows:
            bound = c0 * r**2
            slack = threshold * math.hypot(e.stderr, e0.stderr * (r / r0) ** 2)
            passed = e.mean <= bound + slack
            ok &= passed
            rows.append([fmt(r), fmt(e.mean), fmt(e.stderr), e.n_paths, fmt(bound), int(passed)])
        extra["slope"] = res.slope
        checks = {"c0_r2_bound": bool(ok)}
    elif which == "kato_decay":
        radii = [float(r) for r in _vget(loaded, "radii", [0.4, 0.2, 0.1])]
        prof = E.small_ball_kato_decay(spec, radii, pts, n, cfg, args.seed, workers=args.workers)
        header = ["radius", "value", "stderr", "n_paths"]
        rows = [[fmt(r), fmt(e.mean), fmt(e.stderr), e.n_paths] for r, e in prof]
        ordered = sorted(prof, key=lambda t: t[0])
        decreasing = all(a.mean <= b.mean + threshold * math.hypot(a.stderr, b.stderr)
                         for (_, a), (_, b) in zip(ordered, ordered[1:]))
        checks = {"decreasing_in_r": bool(decreasing)}
    elif which == "alpha_decay":
        alphas = [float(a) for a in _vget(loaded, "alphas", [1, 2, 4, 8, 16, 32, 64])]
        horizon = float(_vget(loaded, "horizon", 20.0))
        rep = E.alpha_decay(spec, pts, alphas, n, cfg, args.seed, horizon=horizon, workers=args.workers)
        header = ["alpha", "sup_mean", "sup_stderr", "tail_bound", "below_half"]
        rows = [[fmt(a), fmt(e.mean), fmt(e.stderr), fmt(t), int(e.mean < 0.5)]
                for a, e, t in zip(rep.alphas, rep.sup_estimates, rep.tail_bounds)]
        extra["first_alpha_below_half"] = rep.first_below_half
        checks = {"monotone": rep.monotone, "falls_below_half": rep.first_below_half is not None}
    elif which == "conservative":
        horizon = float(_vget(loaded, "horizon", 5.0))
        kb = _vget(loaded, "kappa_bound", None)
        if kb is None:
            kb = spec.jumps.kappa.bound(*validation_halo(spec.domain)) if spec.jumps is not None else 0.0
        rep = E.conservativeness_check(spec, pts[0], horizon, float(kb), n, cfg, args.seed, workers=args.workers)
        header = ["mean_jumps", "stderr", "bound", "failures", "pass"]
        rows = [[fmt(rep.mean_jumps.mean), fmt(rep.mean_jumps.stderr), fmt(rep.bound), rep.failures, int(rep.passed)]]
        checks = {"poisson_bound": rep.passed}
    else:  # argparse restricts choices
        raise ValidationError(f"unknown check {which!r}")

    out = Path(args.out)
    _write_csv(out, header, rows)
    _manifest(out, args, loaded, cfg, started, checks, extra)
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def _oracle_system(loaded: LoadedConfig, h: float, alpha: float | None):
    spec = loaded.spec
    pad = int(loaded.oracle.get("pad", 1))
    if alpha is None:
        return O.solve_dirichlet_fd(spec, h, pad)
    f = loaded.verify.get("f")
    if f is None:
        raise ValidationError("verify.f is required for a resolvent oracle")
    lo = loaded.oracle.get("box_lo")
    hi = loaded.oracle.get("box_hi")
    if lo is None or hi is None:
        raise ValidationError("oracle.box_lo and oracle.box_hi are required for a resolvent oracle")
    return O.resolvent_oracle(spec, f, alpha, O.Grid.for_box(lo, hi, h))


def _oracle_checks(system: O.GridSystem, alpha: float | None) -> dict:
    vals = system.solution
    lo, hi = system.exterior_range
    if alpha is None:
        tol = 1e-10 * max(1.0, abs(lo), abs(hi))
        return {"discrete_maximum_principle": bool(np.all(vals >= lo - tol) and np.all(vals <= hi + tol))}
    return {"finite": bool(np.all(np.isfinite(vals)))}


def cmd_oracle(args) -> int:
    started = time.perf_counter()
    loaded = load_config(args.config)
    h = args.h if args.h is not None else float(loaded.oracle.get("h", 0.01))
    system = _oracle_system(loaded, h, args.alpha)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    O.write_grid_csv(tmp, system, fmt)
    os.replace(tmp, out)
    checks = _oracle_checks(system, args.alpha)
    _manifest(out, args, loaded, loaded.sim, started, checks,
              {"h": h, "residual": system.residual, "snapped_atoms": len(system.snapped), **system.aux})
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def cmd_compare(args) -> int:
    started = time.perf_counter()
    loaded = load_config(args.config)
    spec = loaded.spec
    require_valid(spec)
    cfg = _sim_cfg(args, loaded)
    h = args.h if args.h is not None else float(loaded.oracle.get("h", 0.01))
    fine = _oracle_system(loaded, h, None)
    coarse = _oracle_system(loaded, 2 * h, None)
    pts = _points(args, loaded)
    mc = E.solve_dirichlet(spec, pts, args.paths, cfg, args.seed, workers=args.workers)
    report = O.compare(mc, fine, coarse)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    O.write_comparison_csv(tmp, report, fmt)
    os.replace(tmp, out)
    checks = {f"point_{i}": r.passed for i, r in enumerate(report.rows)}
    checks.update(_oracle_checks(fine, None))
    _manifest(out, args, loaded, cfg, started, checks, {"h": h})
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


# -------------------------------------------------------------------- parser


def _env_workers() -> int | None:
    v = os.environ.get("NLDP_WORKERS")
    try:
        return int(v) if v else None
    except ValueError:
        return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nldp", description="Monte Carlo solver for nonlocal Dirichlet problems.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, paths=True):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--seed", type=int, default=0)
        if paths:
            sp.add_argument("--paths", type=int, default=10_000)
            sp.add_argument("--dt", type=float, default=None)
            sp.add_argument("--workers", type=int, default=_env_workers())
            sp.add_argument("--points", default=None, help="points as 'x1,x2;x1,x2'")

    common(sub.add_parser("solve", help="estimate u(x) = E_x phi(X at exit)"))
    v = sub.add_parser("verify", help="run a statistical identity or scaling check")
    common(v)
    v.add_argument("--which", required=True, choices=VERIFY_CHOICES)
    v.add_argument("--alpha", type=float, default=None)
    o = sub.add_parser("oracle", help="finite-difference solution on a grid")
    common(o, paths=False)
    o.add_argument("--h", type=float, default=None)
    o.add_argument("--alpha", type=float, default=None, help="solve the resolvent equation with verify.f instead")
    c = sub.add_parser("compare", help="Monte Carlo against the finite-difference oracle")
    common(c)
    c.add_argument("--h", type=float, default=None)
    return p


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "oracle": cmd_oracle, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NLDPError as exc:
        code = EXIT_VALIDATION if isinstance(exc, ValidationError) or exc.category.startswith("unsupported") \
            else EXIT_SIMULATION
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
