"""Simulation of the diffusion, its killed subprocess and the full jump process.

The full process is pieced together from killed legs: a leg runs until its
integrated hazard ``int kappa(X_s) ds`` reaches an Exp(1) threshold, the
position at that instant is the pre-jump point, and the next leg restarts from
a point drawn from the redistribution law there.

Paths are simulated in compiled batches (:func:`simulate`); the single-path
functions :func:`run_until_exit` and :func:`run_killed` are thin views on the
same kernel, so a path reproduces bit-for-bit whether it runs alone or in a
batch of any size, on any number of workers.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import _kernel as K
from .errors import (
    EvaluationFailure,
    JumpBudgetExceeded,
    NonExit,
    PreconditionError,
    UnsupportedCoefficient,
    ValidationError,
)
from .fields import FieldBank, ScalarField
from .problem import Ball, Box, Domain, ProblemSpec
from .rng import RngStream, key_words


class HazardRule(str, Enum):
    TRAPEZOID = "trapezoid"
    LEFT_POINT = "left_point"


class ExitRule(str, Enum):
    FIRST_EXTERIOR_SAMPLE = "first_exterior_sample"
    BRIDGE_CORRECTED = "bridge_corrected"


class ExitMode(str, Enum):
    DIFFUSED_ACROSS = "diffused_across"
    JUMPED_OUTSIDE = "jumped_outside"


@dataclass(frozen=True)
class SimConfig:
    """Time stepping and budget parameters.

    Near the boundary the step shrinks to
    ``dt_base * min(1, dt_boundary_factor * sd**2 / (lam * dt_base))``
    (``sd`` the signed distance), floored at ``dt_min_ratio * dt_base``.
    """

    dt_base: float = 1e-3
    dt_boundary_factor: float = 0.1
    dt_min_ratio: float = 1e-3
    max_steps: int = 10_000_000
    max_jumps: int = 1_000_000
    hazard_rule: HazardRule = HazardRule.TRAPEZOID
    exit_rule: ExitRule = ExitRule.FIRST_EXTERIOR_SAMPLE
    boundary_tol: float = 1e-9

    def __post_init__(self):
        if not self.dt_base > 0:
            raise ValidationError("dt_base must be positive")
        if not 0 < self.dt_boundary_factor <= 1:
            raise ValidationError("dt_boundary_factor must lie in (0, 1]")
        if not 0 < self.dt_min_ratio <= 1:
            raise ValidationError("dt_min_ratio must lie in (0, 1]")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")
        if self.max_jumps < 0:
            raise ValidationError("max_jumps must be >= 0")
        object.__setattr__(self, "hazard_rule", HazardRule(self.hazard_rule))
        object.__setattr__(self, "exit_rule", ExitRule(self.exit_rule))

    @property
    def horizon(self) -> float:
        return self.max_steps * self.dt_base

    def with_(self, **changes) -> SimConfig:
        return replace(self, **changes)


@dataclass
class PathState:
    position: np.ndarray
    time: float = 0.0
    hazard_accum: float = 0.0
    hazard_threshold: float = math.inf
    jumps_so_far: int = 0

    @property
    def survival_weight(self) -> float:
        """exp(-hazard_accum): conditional survival of the current killed leg."""
        return math.exp(-self.hazard_accum)


@dataclass(frozen=True)
class ExitRecord:
    exit_point: np.ndarray
    exit_time: float
    n_jumps: int
    exit_mode: ExitMode
    boundary_jump_flag: bool
    steps_used: int


@dataclass(frozen=True)
class KilledPathRecord:
    killed: bool
    death_time: float  # inf for survivors
    pre_death_position: np.ndarray  # nan for survivors
    end_position: np.ndarray
    horizon: float
    hazard_integral: float
    discounted_integral: float
    steps_used: int

    def discounted(self, alpha: float, phi) -> float:
        """e^{-alpha * death_time} * phi(pre-death position), 0 for survivors."""
        if not self.killed:
            return 0.0
        return math.exp(-alpha * self.death_time) * float(phi(self.pre_death_position))


@dataclass
class PathBatch:
    """Raw per-path outputs of one compiled batch."""

    position: np.ndarray
    time: np.ndarray
    n_jumps: np.ndarray
    mode: np.ndarray
    boundary_flag: np.ndarray
    steps: np.ndarray
    status: np.ndarray
    pre_jump: np.ndarray
    integral: np.ndarray
    hazard: np.ndarray
    first_jump: np.ndarray
    trace: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.time.shape[0]

    def exited(self) -> np.ndarray:
        return self.status == K.EXITED

    def record(self, i: int) -> ExitRecord:
        return ExitRecord(
            exit_point=self.position[i].copy(),
            exit_time=float(self.time[i]),
            n_jumps=int(self.n_jumps[i]),
            exit_mode=ExitMode.JUMPED_OUTSIDE if self.mode[i] == K.JUMPED_OUTSIDE else ExitMode.DIFFUSED_ACROSS,
            boundary_jump_flag=bool(self.boundary_flag[i]),
            steps_used=int(self.steps[i]),
        )


# ----------------------------------------------------------------- compiling


@dataclass
class CompiledProblem:
    dim: int
    bank_p: np.ndarray
    bank_i: np.ndarray
    a_mode: int
    s_const: np.ndarray
    a_ids: np.ndarray
    div_ids: np.ndarray
    b_ids: np.ndarray
    b_zero: int
    kappa_id: int
    f_id: int
    atom_w: np.ndarray
    atom_pts: np.ndarray
    atom_rel: np.ndarray
    dens: np.ndarray
    dom_code: int
    dom_p: np.ndarray
    lam: float
    bridge_var: float
    extra: dict = field(default_factory=dict)


def encode_domain(domain: Domain | None) -> tuple[int, np.ndarray]:
    if domain is None:
        return K.WHOLE_SPACE, np.zeros(1)
    if isinstance(domain, Ball):
        return K.BALL, np.array([*domain.center, domain.radius], dtype=float)
    if isinstance(domain, Box):
        return K.BOX, np.array([*domain.lo, *domain.hi], dtype=float)
    raise ValidationError(f"domain type {type(domain).__name__} has no compiled form")


def compile_problem(
    spec: ProblemSpec,
    integrand: ScalarField | None = None,
    domain: Domain | None | str = "spec",
    with_jumps: bool = True,
) -> CompiledProblem:
    d = spec.dim
    bank = FieldBank(d)
    ell = spec.elliptic
    a_ids = np.array([[bank.add(e) for e in row] for row in ell.entries], dtype=np.int64)
    if ell.is_constant:
        a_mode = 0
        s_const = np.ascontiguousarray(ell.sqrt_A(np.zeros(d)))
    else:
        a_mode = 1
        s_const = np.zeros((d, d))
    div = ell.div_fields()
    div_ids = np.array([bank.add(c) for c in div] if div else [-1] * d, dtype=np.int64)
    b_ids = np.array([bank.add(c) for c in spec.drift.components], dtype=np.int64)
    jumps = spec.jumps if with_jumps else None
    kappa_id = bank.add(jumps.kappa) if jumps is not None else -1
    f_id = bank.add(integrand)

    if jumps is not None:
        nu = jumps.nu
        atom_w = np.array([a.weight for a in nu.atoms], dtype=float)
        atom_pts = np.array([a.point for a in nu.atoms], dtype=float).reshape(len(nu.atoms), d)
        atom_rel = np.array([1 if a.relative else 0 for a in nu.atoms], dtype=np.int64)
        if nu.density is not None and nu.density.weight > 0:
            dn = nu.density
            dens = np.array([dn.weight, dn.radius, 1.0 if dn.relative else 0.0, *dn.center], dtype=float)
        else:
            dens = np.zeros(3 + d)
    else:
        atom_w = np.zeros(0)
        atom_pts = np.zeros((0, d))
        atom_rel = np.zeros(0, dtype=np.int64)
        dens = np.zeros(3 + d)

    dom = spec.domain if isinstance(domain, str) else domain
    dom_code, dom_p = encode_domain(dom)
    iso = ell.isotropic_scale
    bank_p, bank_i = bank.arrays()
    return CompiledProblem(
        dim=d, bank_p=bank_p, bank_i=bank_i, a_mode=a_mode, s_const=s_const, a_ids=a_ids,
        div_ids=div_ids, b_ids=b_ids, b_zero=int(spec.drift.is_zero), kappa_id=kappa_id, f_id=f_id,
        atom_w=atom_w, atom_pts=atom_pts, atom_rel=atom_rel, dens=dens, dom_code=dom_code, dom_p=dom_p,
        lam=float(ell.lam), bridge_var=float(iso) if iso is not None else math.nan,
    )


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("NLDP_WORKERS", "1")))
    except ValueError:
        return 1


def simulate(
    spec: ProblemSpec,
    x0,
    cfg: SimConfig,
    master_seed: int,
    stream_indices,
    *,
    redistribute: bool = True,
    use_domain: bool = True,
    domain: Domain | None | str = "spec",
    horizon: float = math.inf,
    integrand: ScalarField | None = None,
    alpha: float = 0.0,
    with_jumps: bool = True,
    workers: int | None = None,
    trace_rows: int = 0,
) -> PathBatch:
    """Simulate one path per entry of ``stream_indices``.

    ``x0`` is one start point (broadcast) or one per path. With
    ``redistribute=False`` paths stop at the first clock ring (killed process).
    With ``use_domain`` they stop on leaving the domain; ``horizon`` stops them
    at a fixed time. ``integrand`` accumulates ``int e^{-alpha t} f(X_t) dt``
    by the left-point rule with exact discount weights.
    """
    comp = compile_problem(spec, integrand, domain, with_jumps)
    streams = np.asarray(stream_indices, dtype=np.uint64).ravel()
    n = streams.shape[0]
    d = comp.dim
    x0 = np.asarray(x0, dtype=float)
    starts = np.ascontiguousarray(np.broadcast_to(x0.reshape(-1, d), (n, d)) if x0.size == d else x0.reshape(n, d))
    if not np.all(np.isfinite(starts)):
        raise PreconditionError("start points must be finite")
    if cfg.exit_rule is ExitRule.BRIDGE_CORRECTED and use_domain and comp.dom_code != K.WHOLE_SPACE:
        if not math.isfinite(comp.bridge_var):
            raise UnsupportedCoefficient("bridge_corrected exit rule requires constant isotropic A")

    fcfg = np.zeros(K.N_FCFG)
    fcfg[K.F_DT] = cfg.dt_base
    fcfg[K.F_BFAC] = cfg.dt_boundary_factor
    fcfg[K.F_DTMIN] = cfg.dt_min_ratio * cfg.dt_base
    fcfg[K.F_HORIZON] = horizon
    fcfg[K.F_ALPHA] = alpha
    fcfg[K.F_BTOL] = cfg.boundary_tol
    fcfg[K.F_BRIDGE_VAR] = comp.bridge_var if math.isfinite(comp.bridge_var) else 1.0
    fcfg[K.F_LAM] = comp.lam
    icfg = np.zeros(K.N_ICFG, dtype=np.int64)
    icfg[K.I_MAX_STEPS] = cfg.max_steps
    icfg[K.I_MAX_JUMPS] = cfg.max_jumps
    icfg[K.I_HAZARD] = 0 if cfg.hazard_rule is HazardRule.TRAPEZOID else 1
    icfg[K.I_EXIT] = 1 if cfg.exit_rule is ExitRule.BRIDGE_CORRECTED else 0
    icfg[K.I_REDIST] = int(redistribute)
    icfg[K.I_USE_DOMAIN] = int(use_domain)
    icfg[K.I_A_MODE] = comp.a_mode
    icfg[K.I_KAPPA] = comp.kappa_id
    icfg[K.I_F] = comp.f_id
    icfg[K.I_B_ZERO] = comp.b_zero

    out = PathBatch(
        position=np.empty((n, d)), time=np.empty(n), n_jumps=np.empty(n, dtype=np.int64),
        mode=np.empty(n, dtype=np.int64), boundary_flag=np.empty(n, dtype=np.int8),
        steps=np.empty(n, dtype=np.int64), status=np.empty(n, dtype=np.int64),
        pre_jump=np.empty((n, d)), integral=np.empty(n), hazard=np.empty(n), first_jump=np.empty(n),
    )
    trace = np.zeros((trace_rows, 4 + d))
    trace_n = np.zeros(1, dtype=np.int64)
    k0, _ = key_words(master_seed, 0)

    def run(lo: int, hi: int) -> None:
        K.run_paths(
            lo, hi, starts, streams, k0, fcfg, icfg, comp.bank_p, comp.bank_i, comp.s_const, comp.a_ids,
            comp.div_ids, comp.b_ids, comp.atom_w, comp.atom_pts, comp.atom_rel, comp.dens, comp.dom_code,
            comp.dom_p, out.position, out.time, out.n_jumps, out.mode, out.boundary_flag, out.steps,
            out.status, out.pre_jump, out.integral, out.hazard, out.first_jump, trace, trace_n,
        )

    workers = default_workers() if workers is None else max(1, int(workers))
    if trace_rows:
        workers = 1
    if workers == 1 or n < 2:
        run(0, n)
    else:
        bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda ab: run(*ab), zip(bounds[:-1], bounds[1:])))

    if not (np.all(np.isfinite(out.position)) and np.all(np.isfinite(out.time))):
        raise EvaluationFailure("non-finite position or time produced; check coefficient fields")
    if trace_rows:
        out.trace = trace[: trace_n[0]].copy()
    return out


# ---------------------------------------------------------------- single path


def _check_inside(spec: ProblemSpec, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    if not spec.domain.contains(x0):
        raise PreconditionError(f"start point {x0.tolist()} is not in the domain")
    return x0


def run_until_exit(spec: ProblemSpec, x0, cfg: SimConfig, rng: RngStream) -> ExitRecord:
    """Simulate the full process from ``x0`` until it leaves the domain."""
    x0 = _check_inside(spec, x0)
    batch = simulate(spec, x0, cfg, rng.master_seed, [rng.stream_index], workers=1)
    status = int(batch.status[0])
    if status == K.NONEXIT:
        raise NonExit(f"no exit within max_steps={cfg.max_steps}")
    if status == K.JUMP_BUDGET:
        raise JumpBudgetExceeded(f"more than max_jumps={cfg.max_jumps} redistributions")
    return batch.record(0)


def run_killed(spec: ProblemSpec, x0, cfg: SimConfig, rng: RngStream, alpha: float = 0.0,
               integrand: ScalarField | None = None) -> KilledPathRecord:
    """Simulate the killed process on the whole space up to ``cfg.horizon``."""
    x0 = np.asarray(x0, dtype=float).reshape(spec.dim)
    batch = simulate(
        spec, x0, cfg.with_(max_steps=cfg.max_steps + 1), rng.master_seed, [rng.stream_index],
        redistribute=False, use_domain=False, horizon=cfg.horizon, integrand=integrand, alpha=alpha,
        workers=1,
    )
    return killed_record(batch, 0, cfg.horizon)


def killed_record(batch: PathBatch, i: int, horizon: float) -> KilledPathRecord:
    killed = int(batch.status[i]) == K.KILLED
    return KilledPathRecord(
        killed=killed,
        death_time=float(batch.time[i]) if killed else math.inf,
        pre_death_position=batch.pre_jump[i].copy(),
        end_position=batch.position[i].copy(),
        horizon=horizon,
        hazard_integral=float(batch.hazard[i]),
        discounted_integral=float(batch.integral[i]),
        steps_used=int(batch.steps[i]),
    )


def step_diffusion(spec: ProblemSpec, state: PathState, dt: float, rng: RngStream,
                   hazard_rule: HazardRule | str = HazardRule.TRAPEZOID) -> PathState:
    """One Euler-Maruyama step of dX = (b + div(A)/2) dt + sqrt(A) dW.

    Consumes ``dim`` normals from ``rng`` in the same order as the compiled
    kernel; the hazard is advanced with kappa at the endpoint(s).
    """
    if not dt > 0:
        raise PreconditionError("dt must be positive")
    x = np.asarray(state.position, dtype=float)
    d = spec.dim
    dw = rng.normals(d) * math.sqrt(dt)
    mu = spec.drift.eval_b(x)
    div = spec.elliptic.eval_div_A(x)
    if not isinstance(div, str):
        mu = mu + 0.5 * div
    s = spec.elliptic.sqrt_A(x)
    y = x + mu * dt + s @ dw
    if not np.all(np.isfinite(y)):
        raise EvaluationFailure("diffusion step produced a non-finite position")
    kx = float(spec.kappa(x))
    ky = float(spec.kappa(y))
    if HazardRule(hazard_rule) is HazardRule.TRAPEZOID:
        dh = 0.5 * (kx + ky) * dt
    else:
        dh = kx * dt
    return PathState(y, state.time + dt, state.hazard_accum + dh, state.hazard_threshold, state.jumps_so_far)


_EVENTS = {K.EV_STEP: "step", K.EV_JUMP: "jump", K.EV_EXIT: "exit", K.EV_DEATH: "death", K.EV_HORIZON: "horizon"}


def dump_trace(spec: ProblemSpec, x0, cfg: SimConfig, rng: RngStream, path, max_rows: int = 1_000_000) -> int:
    """Write the step-by-step trace of one exit path as CSV; returns row count."""
    x0 = _check_inside(spec, x0)
    batch = simulate(spec, x0, cfg, rng.master_seed, [rng.stream_index], trace_rows=max_rows)
    d = spec.dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", *[f"x{j + 1}" for j in range(d)], "hazard_accum", "event"])
        for row in batch.trace:
            w.writerow([int(row[0]), repr(float(row[1])), *[repr(float(v)) for v in row[2:2 + d]],
                        repr(float(row[2 + d])), _EVENTS[int(row[3 + d])]])
    return batch.trace.shape[0]
