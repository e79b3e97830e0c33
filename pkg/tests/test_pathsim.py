import csv
import math

import numpy as np
import pytest

from nldp import _kernel as K
from nldp.errors import JumpBudgetExceeded, NonExit, PreconditionError, UnsupportedCoefficient
from nldp.fields import Constant, Polynomial
from nldp.pathsim import (ExitMode, ExitRule, HazardRule, PathState, SimConfig, dump_trace, run_killed,
                          run_until_exit, simulate, step_diffusion)
from nldp.problem import (Atom, Ball, BoundaryData, DriftField, EllipticField, Interval, JumpKernel, ProblemSpec,
                          RedistributionLaw, UniformBall)
from nldp.rng import RngStream


def _free(dim=2, drift=None, kappa=None, nu=None, elliptic=None):
    jumps = JumpKernel(Constant(kappa), nu or RedistributionLaw((Atom(1.0, (5.0,) * dim),))) if kappa else None
    return ProblemSpec(elliptic or EllipticField.identity(dim), drift or DriftField.zero(dim),
                       Ball((0.0,) * dim, 1.0), BoundaryData(Constant(0.0), 0.0), jumps)


def _steps(spec, x, dt, n, seed=0):
    rng = RngStream(seed, 0)
    st = PathState(np.asarray(x, float))
    out = np.empty((n, spec.dim))
    for i in range(n):
        out[i] = step_diffusion(spec, st, dt, rng).position - st.position
    return out


def test_brownian_increment_norm():
    t, n = 0.04, 100_000
    inc = _steps(_free(), (0.0, 0.0), t, n)
    r = np.linalg.norm(inc, axis=1)
    exact = math.sqrt(math.pi / 2) * math.sqrt(t)  # Rayleigh mean
    assert abs(r.mean() - exact) < 4 * r.std(ddof=1) / math.sqrt(n)


def test_constant_drift_mean():
    n = 100_000
    inc = _steps(_free(drift=DriftField.constant((1.0, 0.0))), (0.0, 0.0), 0.01, n, seed=1)
    assert abs(inc[:, 0].mean() - 0.01) < 4 * inc[:, 0].std(ddof=1) / math.sqrt(n)


def test_divergence_correction_enters_drift():
    a11 = Polynomial.from_terms([(1.0, (0, 0)), (0.5, (1, 0))])
    zero, one = Polynomial.from_terms([(0.0, (0, 0))]), Polynomial.from_terms([(1.0, (0, 0))])
    ell = EllipticField(2, ((a11, zero), (zero, one)), 2.0)
    n = 100_000
    inc = _steps(_free(elliptic=ell), (0.2, 0.0), 0.01, n, seed=2)
    # (1/2) d/dx1 a11 = 0.25
    assert abs(inc[:, 0].mean() - 0.0025) < 4 * inc[:, 0].std(ddof=1) / math.sqrt(n)


def test_constant_hazard_increment_exact():
    spec = _free(kappa=2.0)
    st = step_diffusion(spec, PathState(np.zeros(2)), 0.01, RngStream(0, 0), HazardRule.TRAPEZOID)
    assert st.hazard_accum == 0.02
    st = step_diffusion(spec, PathState(np.zeros(2)), 0.01, RngStream(0, 0), HazardRule.LEFT_POINT)
    assert st.hazard_accum == 0.02


def test_numpy_step_matches_kernel_step():
    spec = _free(drift=DriftField.constant((0.3, -0.1)))
    dt = 0.01
    st = step_diffusion(spec, PathState(np.array([0.1, 0.2])), dt, RngStream(11, 4))
    cfg = SimConfig(dt_base=dt, max_steps=10)
    batch = simulate(spec, (0.1, 0.2), cfg, 11, [4], use_domain=False, horizon=dt)
    np.testing.assert_array_equal(batch.position[0], st.position)
    assert batch.status[0] == K.HORIZON


def test_no_jumps_without_kappa():
    spec = _free()
    cfg = SimConfig(dt_base=1e-3)
    batch = simulate(spec, (0.3, 0.0), cfg, 0, np.arange(500))
    assert np.all(batch.n_jumps == 0)
    assert not np.any(spec.domain.contains(batch.position))


def test_jumped_outside_lands_on_atom():
    target = (2.5, -1.0)
    spec = _free(kappa=3.0, nu=RedistributionLaw((Atom(1.0, target),)))
    batch = simulate(spec, (0.0, 0.0), SimConfig(dt_base=1e-3), 1, np.arange(2000))
    jumped = batch.mode == K.JUMPED_OUTSIDE
    assert 0 < jumped.sum() < 2000
    assert np.all(batch.position[jumped] == np.asarray(target))
    assert not np.any(spec.domain.contains(batch.position))
    rec = run_until_exit(spec, (0.0, 0.0), SimConfig(dt_base=1e-3), RngStream(1, int(np.flatnonzero(jumped)[0])))
    assert rec.exit_mode is ExitMode.JUMPED_OUTSIDE and rec.n_jumps == 1


def test_atom_frequencies():
    n = 100_000
    w = (0.2, 0.3, 0.5)
    targets = [(3.0, 0.0), (0.0, 3.0), (-3.0, 0.0)]
    spec = _free(kappa=1e4, nu=RedistributionLaw(tuple(Atom(wi, t) for wi, t in zip(w, targets))))
    batch = simulate(spec, (0.0, 0.0), SimConfig(dt_base=1e-5), 3, np.arange(n))
    assert np.all(batch.mode == K.JUMPED_OUTSIDE)
    for wi, t in zip(w, targets):
        freq = np.mean(np.all(batch.position == np.asarray(t), axis=1))
        assert abs(freq - wi) <= 4 * math.sqrt(wi * (1 - wi) / n)


def test_density_component_sampler():
    n = 50_000
    nu = RedistributionLaw((), UniformBall(1.0, (3.0, 0.0), 0.5))
    spec = _free(kappa=1e4, nu=nu)
    batch = simulate(spec, (0.0, 0.0), SimConfig(dt_base=1e-5), 4, np.arange(n))
    r = np.linalg.norm(batch.position - np.array([3.0, 0.0]), axis=1)
    assert r.max() <= 0.5
    # uniform on a disk of radius R: E|Y - c|^2 = R^2 / 2
    assert abs(np.mean(r**2) - 0.125) < 4 * np.std(r**2, ddof=1) / math.sqrt(n)


def test_interior_atom_continues_walk():
    spec = _free(kappa=5.0, nu=RedistributionLaw((Atom(1.0, (0.0, 0.0)),)))
    batch = simulate(spec, (0.5, 0.0), SimConfig(dt_base=1e-3), 0, np.arange(300))
    assert batch.n_jumps.max() > 1
    assert np.all(batch.mode == K.DIFFUSED_ACROSS)
    assert not np.any(spec.domain.contains(batch.position))


def test_boundary_jump_flag():
    spec = ProblemSpec(EllipticField.identity(1), DriftField.zero(1), Interval(0.0, 1.0),
                       BoundaryData(Constant(0.0), 0.0),
                       JumpKernel(Constant(50.0), RedistributionLaw((Atom(1.0, (1.0,)),))))
    batch = simulate(spec, (0.5,), SimConfig(dt_base=1e-4), 0, np.arange(200))
    jumped = batch.mode == K.JUMPED_OUTSIDE
    assert jumped.sum() > 150
    assert np.all(batch.boundary_flag[jumped] == 1)
    assert np.all(batch.boundary_flag[~jumped] == 0)


def test_killed_constant_rate():
    lam, alpha, n = 2.0, 1.0, 100_000
    spec = _free(kappa=lam)
    cfg = SimConfig(dt_base=1e-2, max_steps=5000)
    batch = simulate(spec, (0.0, 0.0), cfg, 5, np.arange(n), redistribute=False, use_domain=False,
                     horizon=cfg.horizon)
    assert np.all(batch.status == K.KILLED)
    t = batch.time
    assert abs(t.mean() - 1 / lam) < 4 * t.std(ddof=1) / math.sqrt(n)
    lap = np.exp(-alpha * t)
    assert abs(lap.mean() - lam / (lam + alpha)) < 4 * lap.std(ddof=1) / math.sqrt(n)
    rec = run_killed(spec, (0.0, 0.0), cfg, RngStream(5, 7), alpha=alpha)
    assert rec.killed and rec.death_time == batch.time[7]
    np.testing.assert_array_equal(rec.pre_death_position, batch.pre_jump[7])
    assert rec.discounted(alpha, lambda x: 2.0) == pytest.approx(2 * math.exp(-alpha * rec.death_time))


def test_killed_zero_rate_survives():
    spec = _free()
    cfg = SimConfig(dt_base=1e-2, max_steps=100)
    for k in range(20):
        rec = run_killed(spec, (0.0, 0.0), cfg, RngStream(0, k))
        assert not rec.killed and math.isinf(rec.death_time)
        assert rec.discounted(1.0, lambda x: 1.0) == 0.0


def test_determinism_across_batching_and_workers():
    spec = _free(kappa=2.0, nu=RedistributionLaw((Atom(0.5, (0.2, 0.1)), Atom(0.5, (4.0, 0.0)))))
    cfg = SimConfig(dt_base=1e-3)
    idx = np.arange(1000, 1400, dtype=np.uint64)
    ref = simulate(spec, (0.1, -0.2), cfg, 99, idx, workers=1)
    for w in (2, 8):
        other = simulate(spec, (0.1, -0.2), cfg, 99, idx, workers=w)
        for name in ("position", "time", "n_jumps", "steps", "status", "pre_jump"):
            np.testing.assert_array_equal(getattr(ref, name), getattr(other, name))
    for i in (0, 17, 399):
        rec = run_until_exit(spec, (0.1, -0.2), cfg, RngStream(99, int(idx[i])))
        np.testing.assert_array_equal(rec.exit_point, ref.position[i])
        assert rec.exit_time == ref.time[i] and rec.n_jumps == ref.n_jumps[i]


def test_budget_errors():
    spec = _free()
    with pytest.raises(NonExit):
        run_until_exit(spec, (0.0, 0.0), SimConfig(dt_base=1e-4, max_steps=10), RngStream(0, 0))
    inner = _free(kappa=100.0, nu=RedistributionLaw((Atom(1.0, (0.0, 0.0)),)))
    with pytest.raises(JumpBudgetExceeded):
        run_until_exit(inner, (0.5, 0.0), SimConfig(dt_base=1e-3, max_jumps=0), RngStream(0, 0))
    with pytest.raises(PreconditionError):
        run_until_exit(spec, (2.0, 0.0), SimConfig(), RngStream(0, 0))


def test_bridge_rule_needs_isotropic_A_and_reduces_bias():
    aniso = _free(elliptic=EllipticField.constant(np.diag([1.0, 2.0])))
    cfg = SimConfig(dt_base=1e-3, exit_rule=ExitRule.BRIDGE_CORRECTED)
    with pytest.raises(UnsupportedCoefficient):
        simulate(aniso, (0.0, 0.0), cfg, 0, [0])
    spec = _free()
    n = 20_000
    plain = simulate(spec, (0.0, 0.0), SimConfig(dt_base=1e-2, dt_boundary_factor=1.0), 0, np.arange(n))
    bridge = simulate(spec, (0.0, 0.0), cfg.with_(dt_base=1e-2, dt_boundary_factor=1.0), 0, np.arange(n))
    # exact mean exit time from the centre of the unit disk is 1/2
    assert abs(bridge.time.mean() - 0.5) < abs(plain.time.mean() - 0.5)
    assert not np.any(spec.domain.contains(bridge.position))


def test_trace_dump(tmp_path):
    spec = _free(kappa=3.0, nu=RedistributionLaw((Atom(1.0, (0.0, 0.0)),)))
    path = tmp_path / "trace.csv"
    rows = dump_trace(spec, (0.5, 0.0), SimConfig(dt_base=1e-3), RngStream(0, 3), path)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["step", "t", "x1", "x2", "hazard_accum", "event"]
    assert len(data) == rows + 1
    assert data[-1][-1] == "exit"
    times = [float(r[1]) for r in data[1:]]
    assert all(b >= a for a, b in zip(times, times[1:]))
