"""Monte Carlo estimators built on :mod:`nldp.pathsim`.

All reductions over paths use :func:`math.fsum`, which is correctly rounded
and therefore independent of summation order: an estimate is the same number
however the paths were scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .errors import (
    JumpBudgetExceeded,
    NonExit,
    PreconditionError,
    TruncationBudgetExceeded,
    UnsupportedKernel,
)
from .fields import Constant, Product, ScalarField
from .pathsim import SimConfig, simulate
from .problem import Ball, ProblemSpec, as_points

# stream-index layout: tag << 56 | point << 32 | path
TAG_SOLVE = 0
TAG_FULL = 1
TAG_KILLED = 2
TAG_KILLED_LHS = 3
TAG_INNER = 4
TAG_EXIT = 5
TAG_KATO = 6
TAG_ALPHA = 7
TAG_CONSERVATIVE = 8


def stream_indices(tag: int, point: int, n_paths: int) -> np.ndarray:
    if n_paths >= 1 << 32 or point >= 1 << 24:
        raise PreconditionError("too many paths or points for the stream layout")
    base = (tag << 56) | (point << 32)
    return np.uint64(base) + np.arange(n_paths, dtype=np.uint64)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    n_paths: int
    aux: dict = field(default_factory=dict)

    @property
    def ci95(self) -> tuple[float, float]:
        return self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr

    @classmethod
    def from_samples(cls, samples, aux: dict | None = None) -> Estimate:
        x = np.asarray(samples, dtype=float).ravel()
        n = x.shape[0]
        if n == 0:
            return cls(math.nan, math.nan, 0, dict(aux or {}))
        if np.all(x == x[0]):
            return cls(float(x[0]), 0.0, n, dict(aux or {}))
        mean = math.fsum(x) / n
        var = math.fsum((x - mean) ** 2) / (n - 1) if n > 1 else math.nan
        return cls(mean, math.sqrt(var / n), n, dict(aux or {}))


@dataclass(frozen=True)
class IdentityReport:
    lhs: Estimate
    rhs: Estimate
    threshold: float = 3.0

    @property
    def z_score(self) -> float:
        gap = abs(self.lhs.mean - self.rhs.mean)
        se = math.hypot(self.lhs.stderr, self.rhs.stderr)
        if se == 0.0:
            return 0.0 if gap == 0.0 else math.inf
        return gap / se

    @property
    def passed(self) -> bool:
        return self.z_score <= self.threshold


# ------------------------------------------------------------------- helpers


def _bounded_sup(f: ScalarField, dim: int, sup_f: float | None) -> float:
    if sup_f is not None:
        return float(sup_f)
    big = np.full(dim, 1e300)
    s = f.bound(-big, big)
    if not math.isfinite(s):
        raise PreconditionError("integrand must be bounded; pass sup_f explicitly")
    return float(s)


def truncation_horizon(alpha: float, sup_f: float, target_stderr: float) -> float:
    """T = max(ln(10 sup_f / (alpha eps)) / alpha, 10 / alpha)."""
    if not alpha > 0:
        raise PreconditionError("alpha must be positive for the truncation rule")
    t = 10.0 / alpha
    if sup_f > 0:
        t = max(t, math.log(10.0 * sup_f / (alpha * target_stderr)) / alpha)
    return t


def tail_bound(alpha: float, sup_f: float, horizon: float) -> float:
    return sup_f * math.exp(-alpha * horizon) / alpha if alpha > 0 else math.inf


def _horizon_cfg(cfg: SimConfig, horizon: float) -> SimConfig:
    need = math.ceil(horizon / cfg.dt_base * (1 - 1e-12))
    if need > cfg.max_steps:
        raise TruncationBudgetExceeded(
            f"horizon {horizon:.6g} needs {need} steps of dt={cfg.dt_base:g}, above max_steps={cfg.max_steps}"
        )
    # steps split by a jump advance time by less than dt, so keep the full budget
    return cfg


def _check_jumps(batch) -> None:
    if np.any(batch.status == K.JUMP_BUDGET):
        raise JumpBudgetExceeded("a path exceeded max_jumps redistributions")


# ------------------------------------------------------------------ Dirichlet


def solve_dirichlet(
    spec: ProblemSpec,
    points,
    n_paths: int,
    cfg: SimConfig,
    master_seed: int,
    *,
    workers: int | None = None,
    max_nonexit_fraction: float = 1e-3,
) -> list[tuple[np.ndarray, Estimate]]:
    """Estimate u(x) = E_x[phi(X at its exit time from D)] at each point."""
    if n_paths < 2:
        raise PreconditionError("n_paths must be >= 2")
    pts = as_points(points, spec.dim)
    inside = spec.domain.contains(pts)
    if not np.all(inside):
        bad = pts[~inside].tolist()
        raise PreconditionError(f"points outside the domain: {bad}")
    out = []
    for k, x in enumerate(pts):
        batch = simulate(spec, x, cfg, master_seed, stream_indices(TAG_SOLVE, k, n_paths), workers=workers)
        _check_jumps(batch)
        ok = batch.exited()
        nonexit = int(np.sum(batch.status == K.NONEXIT))
        if nonexit > max_nonexit_fraction * n_paths:
            raise NonExit(f"{nonexit} of {n_paths} paths from {x.tolist()} did not exit within max_steps")
        exits = batch.position[ok]
        if np.any(spec.domain.contains(exits)):
            raise AssertionError("exit point inside the domain")
        phi = np.asarray(spec.boundary.phi(exits), dtype=float).reshape(-1)
        aux = {
            "mean_exit_time": math.fsum(batch.time[ok]) / max(1, int(ok.sum())),
            "mean_jumps": math.fsum(batch.n_jumps[ok].astype(float)) / max(1, int(ok.sum())),
            "boundary_jump_fraction": float(np.sum(batch.boundary_flag[ok])) / max(1, int(ok.sum())),
            "jumped_outside_fraction": float(np.sum(batch.mode[ok] == K.JUMPED_OUTSIDE)) / max(1, int(ok.sum())),
            "nonexit_count": nonexit,
            "phi_min": float(phi.min()) if phi.size else math.nan,
            "phi_max": float(phi.max()) if phi.size else math.nan,
        }
        out.append((x.copy(), Estimate.from_samples(phi, aux)))
    return out


# ------------------------------------------------------------------ resolvents


def _resolvent(
    spec, f, alpha, x, n_paths, cfg, seed, *, killed, tag, point, target_stderr, sup_f, workers, horizon=None
) -> tuple[Estimate, object]:
    x = np.asarray(x, dtype=float).reshape(spec.dim)
    sup = _bounded_sup(f, spec.dim, sup_f)
    if horizon is None:
        horizon = truncation_horizon(alpha, sup, target_stderr)
    run_cfg = _horizon_cfg(cfg, horizon)
    if sup == 0.0 and isinstance(f, Constant):
        vals = np.zeros(n_paths)
        batch = None
    else:
        batch = simulate(
            spec, x, run_cfg, seed, stream_indices(tag, point, n_paths), redistribute=not killed,
            use_domain=False, horizon=horizon, integrand=f, alpha=alpha, workers=workers,
        )
        _check_jumps(batch)
        vals = batch.integral
    aux = {"horizon": horizon, "tail_bound": tail_bound(alpha, sup, horizon)}
    if batch is not None:
        aux["mean_jumps"] = math.fsum(batch.n_jumps.astype(float)) / n_paths
    return Estimate.from_samples(vals, aux), batch


def resolvent_full(spec: ProblemSpec, f: ScalarField, alpha: float, x, n_paths: int, cfg: SimConfig, seed: int, *,
                   target_stderr: float = 1e-3, sup_f: float | None = None, workers: int | None = None,
                   point_index: int = 0) -> Estimate:
    """G_alpha f(x) = E_x int_0^inf e^{-alpha t} f(X_t) dt for the full process, truncated at T."""
    est, _ = _resolvent(spec, f, alpha, x, n_paths, cfg, seed, killed=False, tag=TAG_FULL, point=point_index,
                        target_stderr=target_stderr, sup_f=sup_f, workers=workers)
    return est


def resolvent_killed(spec: ProblemSpec, f: ScalarField, alpha: float, x, n_paths: int, cfg: SimConfig, seed: int, *,
                     target_stderr: float = 1e-3, sup_f: float | None = None, workers: int | None = None,
                     point_index: int = 0) -> Estimate:
    """Resolvent of the killed process: the integral stops at the killing time."""
    est, _ = _resolvent(spec, f, alpha, x, n_paths, cfg, seed, killed=True, tag=TAG_KILLED, point=point_index,
                        target_stderr=target_stderr, sup_f=sup_f, workers=workers)
    return est


# ------------------------------------------------------------ identity checks


def check_prop_2_3(
    spec: ProblemSpec,
    phi: ScalarField,
    alpha: float,
    points,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    sup_phi: float | None = None,
    target_stderr: float = 1e-3,
    threshold: float = 3.0,
    workers: int | None = None,
) -> list[IdentityReport]:
    """E_x[e^{-alpha zeta} phi(X_{zeta-}); zeta < inf] against G^kappa_alpha(kappa phi)(x).

    The two sides use disjoint random streams. For alpha = 0 both are
    truncated at ``cfg.horizon``.
    """
    pts = as_points(points, spec.dim)
    sup = _bounded_sup(phi, spec.dim, sup_phi)
    if spec.jumps is None:
        zero = Estimate(0.0, 0.0, n_paths, {"note": "no jump kernel"})
        return [IdentityReport(zero, zero, threshold) for _ in pts]
    kappa = spec.jumps.kappa
    lo, hi = spec.domain.bounding_box
    sup_k = kappa.bound(lo - 1e3, hi + 1e3)
    if alpha > 0:
        horizon = truncation_horizon(alpha, sup * max(sup_k, 1.0), target_stderr)
    else:
        horizon = cfg.horizon
    run_cfg = _horizon_cfg(cfg, horizon)
    reports = []
    for k, x in enumerate(pts):
        batch = simulate(spec, x, run_cfg, seed, stream_indices(TAG_KILLED_LHS, k, n_paths), redistribute=False,
                         use_domain=False, horizon=horizon, workers=workers)
        killed = batch.status == K.KILLED
        lhs_vals = np.zeros(n_paths)
        if np.any(killed):
            lhs_vals[killed] = np.exp(-alpha * batch.time[killed]) * np.asarray(
                phi(batch.pre_jump[killed]), dtype=float
            ).reshape(-1)
        lhs = Estimate.from_samples(lhs_vals, {"horizon": horizon, "killed_fraction": float(killed.mean())})
        rhs, _ = _resolvent(spec, Product(kappa, phi), alpha, x, n_paths, cfg, seed, killed=True, tag=TAG_KILLED,
                            point=k, target_stderr=target_stderr, sup_f=sup * sup_k, workers=workers,
                            horizon=horizon)
        reports.append(IdentityReport(lhs, rhs, threshold))
    return reports


def check_resolvent_identity(
    spec: ProblemSpec,
    f: ScalarField,
    alpha: float,
    points,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    inner_paths: int | None = None,
    sup_f: float | None = None,
    target_stderr: float = 1e-3,
    threshold: float = 3.0,
    workers: int | None = None,
) -> list[IdentityReport]:
    """G_alpha f = G^kappa_alpha f + G^kappa_alpha(kappa * sum_i w_i G_alpha f(z_i)).

    Atom-only, position-independent redistribution laws only. ``G_alpha f(z_i)``
    is estimated once per atom (``inner_paths`` paths, default n_paths // 4) and
    its standard error enters the right-hand side linearly.
    """
    pts = as_points(points, spec.dim)
    sup = _bounded_sup(f, spec.dim, sup_f)
    if spec.jumps is None:
        reports = []
        for k, x in enumerate(pts):
            lhs = resolvent_full(spec, f, alpha, x, n_paths, cfg, seed, target_stderr=target_stderr, sup_f=sup,
                                 workers=workers, point_index=k)
            # without jumps the killed process is the process itself
            reports.append(IdentityReport(lhs, lhs, threshold))
        return reports
    nu = spec.jumps.nu
    if not nu.is_atomic or not nu.is_homogeneous:
        raise UnsupportedKernel("resolvent identity check needs a fixed, atom-only redistribution law")
    kappa = spec.jumps.kappa
    lo, hi = spec.domain.bounding_box
    sup_k = kappa.bound(lo - 1e3, hi + 1e3)
    horizon = truncation_horizon(alpha, sup * (1.0 + sup_k / alpha), target_stderr)
    inner_n = inner_paths or max(2, n_paths // 4)

    weights, targets = nu.atoms_at(np.zeros(spec.dim))
    inner = []
    for i, zt in enumerate(targets):
        est, _ = _resolvent(spec, f, alpha, zt, inner_n, cfg, seed, killed=False, tag=TAG_INNER, point=i,
                            target_stderr=target_stderr, sup_f=sup, workers=workers, horizon=horizon)
        inner.append(est)
    c = math.fsum(w * e.mean for w, e in zip(weights, inner))
    var_c = math.fsum((w * e.stderr) ** 2 for w, e in zip(weights, inner))

    reports = []
    for k, x in enumerate(pts):
        lhs, _ = _resolvent(spec, f, alpha, x, n_paths, cfg, seed, killed=False, tag=TAG_FULL, point=k,
                            target_stderr=target_stderr, sup_f=sup, workers=workers, horizon=horizon)
        # identical streams: both integrals are taken along the same killed paths
        _, bf = _resolvent(spec, f, alpha, x, n_paths, cfg, seed, killed=True, tag=TAG_KILLED, point=k,
                           target_stderr=target_stderr, sup_f=sup, workers=workers, horizon=horizon)
        _, bk = _resolvent(spec, kappa, alpha, x, n_paths, cfg, seed, killed=True, tag=TAG_KILLED, point=k,
                           target_stderr=target_stderr, sup_f=sup_k, workers=workers, horizon=horizon)
        i_f = bf.integral if bf is not None else np.zeros(n_paths)
        i_k = bk.integral if bk is not None else np.zeros(n_paths)
        per_path = Estimate.from_samples(i_f + c * i_k)
        mean_k = math.fsum(i_k) / n_paths
        se = math.sqrt(per_path.stderr**2 + mean_k**2 * var_c)
        rhs = Estimate(per_path.mean, se, n_paths, {
            "inner_means": [e.mean for e in inner],
            "inner_stderrs": [e.stderr for e in inner],
            "killed_kappa_resolvent": mean_k,
            "horizon": horizon,
        })
        reports.append(IdentityReport(lhs, rhs, threshold))
    return reports


# ------------------------------------------------------------ scaling checks


@dataclass(frozen=True)
class ScalingResult:
    rows: list  # (radius, Estimate)
    slope: float


def exit_time_scaling(
    spec_no_jumps: ProblemSpec,
    center,
    radii,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    scale_dt: bool = True,
    workers: int | None = None,
) -> ScalingResult:
    """Mean exit time from B(center, r) started at the center, per radius.

    With ``scale_dt`` the time step is shrunk by (r / max r)^2 so every ball
    is resolved by the same number of steps per unit squared radius.
    """
    if spec_no_jumps.jumps is not None:
        raise PreconditionError("exit_time_scaling expects a problem without jumps")
    c = np.asarray(center, dtype=float).reshape(spec_no_jumps.dim)
    radii = [float(r) for r in radii]
    rmax = max(radii)
    rows = []
    for k, r in enumerate(radii):
        run_cfg = cfg.with_(dt_base=cfg.dt_base * (r / rmax) ** 2) if scale_dt else cfg
        batch = simulate(spec_no_jumps, c, run_cfg, seed, stream_indices(TAG_EXIT, k, n_paths),
                         domain=Ball(tuple(c), r), workers=workers)
        ok = batch.exited()
        nonexit = int(np.sum(~ok))
        if nonexit > 1e-3 * n_paths:
            raise NonExit(f"{nonexit} paths did not leave B(center, {r})")
        rows.append((r, Estimate.from_samples(batch.time[ok], {"nonexit_count": nonexit})))
    means = np.array([e.mean for _, e in rows])
    slope = float(np.polyfit(np.log(radii), np.log(means), 1)[0]) if len(radii) > 1 else math.nan
    return ScalingResult(rows, slope)


def small_ball_kato_decay(
    spec: ProblemSpec,
    radii,
    probe_points,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    scale_dt: bool = True,
    workers: int | None = None,
) -> list[tuple[float, Estimate]]:
    """Per radius, the max over probes of E_x int_0^{exit of B(x,r)} kappa(X^kappa_s) ds.

    The killed process is used, so the integral stops at the killing time
    (where it equals the exponential threshold) or at the ball exit. With
    ``scale_dt`` the step is shrunk by (r / max r)^2 as in exit_time_scaling.
    """
    pts = as_points(probe_points, spec.dim)
    rmax = max(float(r) for r in radii)
    out = []
    for kr, r in enumerate(radii):
        run_cfg = cfg.with_(dt_base=cfg.dt_base * (r / rmax) ** 2) if scale_dt else cfg
        best = None
        for kp, x in enumerate(pts):
            if spec.jumps is None:
                est = Estimate(0.0, 0.0, n_paths)
            else:
                batch = simulate(spec, x, run_cfg, seed, stream_indices(TAG_KATO, kr * len(pts) + kp, n_paths),
                                 redistribute=False, domain=Ball(tuple(x), float(r)), workers=workers)
                if np.any(batch.status == K.NONEXIT):
                    raise NonExit(f"paths neither exited B(x, {r}) nor were killed")
                est = Estimate.from_samples(batch.hazard, {"probe": x.tolist()})
            if best is None or est.mean > best.mean:
                best = est
        out.append((float(r), best))
    return out


@dataclass(frozen=True)
class AlphaDecayReport:
    alphas: list
    sup_estimates: list  # Estimate at the maximizing probe, per alpha
    first_below_half: float | None
    monotone: bool
    tail_bounds: list


def alpha_decay(
    spec: ProblemSpec,
    probe_points,
    alphas,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    horizon: float | None = None,
    workers: int | None = None,
) -> AlphaDecayReport:
    """Max over probes of E_x[e^{-alpha tau}], tau the first jump time, on shared paths.

    Paths without a jump before ``horizon`` (default ``cfg.horizon``)
    contribute 0; their true contribution is at most e^{-alpha horizon},
    reported per alpha.
    """
    pts = as_points(probe_points, spec.dim)
    alphas = sorted(float(a) for a in alphas)
    taus = []
    horizon = cfg.horizon if horizon is None else float(horizon)
    run_cfg = _horizon_cfg(cfg, horizon)
    for k, x in enumerate(pts):
        if spec.jumps is None:
            taus.append(np.full(n_paths, np.inf))
            continue
        batch = simulate(spec, x, run_cfg, seed, stream_indices(TAG_ALPHA, k, n_paths), redistribute=False,
                         use_domain=False, horizon=horizon, workers=workers)
        taus.append(np.where(batch.status == K.KILLED, batch.time, np.inf))
    sups = []
    previous = None
    monotone = True
    for a in alphas:
        best = None
        for k, tau in enumerate(taus):
            vals = np.exp(-a * tau)
            if previous is not None and np.any(vals > previous[k]):
                monotone = False
            est = Estimate.from_samples(vals, {"probe": pts[k].tolist(), "alpha": a})
            if best is None or est.mean > best.mean:
                best = est
        sups.append(best)
        previous = [np.exp(-a * tau) for tau in taus]
    means = [s.mean for s in sups]
    monotone = monotone and all(m2 <= m1 for m1, m2 in zip(means, means[1:]))
    first = next((a for a, m in zip(alphas, means) if m < 0.5), None)
    return AlphaDecayReport(alphas, sups, first, monotone, [math.exp(-a * horizon) for a in alphas])


@dataclass(frozen=True)
class ConservativenessReport:
    mean_jumps: Estimate
    bound: float
    failures: int
    passed: bool


def conservativeness_check(
    spec: ProblemSpec,
    x0,
    horizon: float,
    kappa_bound: float,
    n_paths: int,
    cfg: SimConfig,
    seed: int,
    *,
    workers: int | None = None,
) -> ConservativenessReport:
    """Run the full process to ``horizon``; the mean jump count must respect the Poisson bound."""
    run_cfg = _horizon_cfg(cfg, horizon)
    batch = simulate(spec, x0, run_cfg, seed, stream_indices(TAG_CONSERVATIVE, 0, n_paths), use_domain=False,
                     horizon=horizon, workers=workers)
    failures = int(np.sum(batch.status != K.HORIZON))
    kt = kappa_bound * horizon
    bound = kt + 4.0 * math.sqrt(kt / n_paths)
    est = Estimate.from_samples(batch.n_jumps.astype(float))
    return ConservativenessReport(est, bound, failures, failures == 0 and est.mean <= bound)
