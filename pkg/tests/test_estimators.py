import math

import numpy as np
import pytest

from nldp import estimators as E
from nldp import scenarios as S
from nldp.errors import NonExit, PreconditionError, TruncationBudgetExceeded, UnsupportedKernel
from nldp.fields import BoxIndicator, Constant
from nldp.pathsim import SimConfig
from nldp.problem import (Atom, Ball, BoundaryData, DriftField, EllipticField, JumpKernel, ProblemSpec,
                          RedistributionLaw, UniformBall)

CFG = SimConfig(dt_base=1e-3)


def test_estimate_from_samples():
    e = E.Estimate.from_samples([0.7] * 10)
    assert e.mean == 0.7 and e.stderr == 0.0
    e = E.Estimate.from_samples([1.0, 2.0, 3.0, 4.0])
    assert e.mean == 2.5
    assert e.stderr == pytest.approx(math.sqrt(5 / 3 / 4))
    lo, hi = e.ci95
    assert hi - lo == pytest.approx(2 * 1.96 * e.stderr)


def test_estimate_is_order_independent():
    rng = np.random.default_rng(0)
    x = rng.normal(size=10_001) * 1e8 + rng.normal(size=10_001)
    a = E.Estimate.from_samples(x)
    b = E.Estimate.from_samples(x[::-1])
    assert a.mean == b.mean and a.stderr == b.stderr


def test_identity_report_zscore():
    r = E.IdentityReport(E.Estimate(1.0, 0.03, 10), E.Estimate(1.1, 0.04, 10))
    assert r.z_score == pytest.approx(2.0)
    assert r.passed
    assert not E.IdentityReport(E.Estimate(1.0, 0.0, 1), E.Estimate(1.1, 0.0, 1)).passed


def test_truncation_rule():
    t = E.truncation_horizon(1.0, 1.0, 1e-3)
    assert t == pytest.approx(max(math.log(1e4), 10.0))
    assert E.truncation_horizon(0.1, 1.0, 1e-3) == pytest.approx(max(math.log(1e5) / 0.1, 100.0))
    assert E.tail_bound(1.0, 1.0, t) == pytest.approx(math.exp(-t))
    with pytest.raises(PreconditionError):
        E.truncation_horizon(0.0, 1.0, 1e-3)
    spec = S.constant_kill(1.0)
    with pytest.raises(TruncationBudgetExceeded):
        E.resolvent_full(spec, Constant(1.0), 0.01, (0, 0), 10, CFG.with_(max_steps=1000), 0)


def test_stream_layout_disjoint():
    a = E.stream_indices(E.TAG_SOLVE, 0, 100)
    b = E.stream_indices(E.TAG_SOLVE, 1, 100)
    c = E.stream_indices(E.TAG_KILLED, 0, 100)
    assert len(set(a) | set(b) | set(c)) == 300


def test_solve_disk_harmonic(zscore):
    spec = S.disk_harmonic()
    pts = [(0.0, 0.0), (0.5, 0.0), (0.0, -0.5)]
    for x, est in E.solve_dirichlet(spec, pts, 20_000, CFG, 1):
        assert zscore(est, x[0]) < 4
        assert est.aux["phi_min"] <= est.mean <= est.aux["phi_max"]
        assert est.aux["nonexit_count"] == 0
        assert est.aux["mean_jumps"] == 0


def test_solve_constant_phi_exact():
    spec = S.disk_harmonic(Constant(0.7))
    (_, est), = E.solve_dirichlet(spec, [(0.2, 0.1)], 200, CFG, 0)
    assert est.mean == 0.7 and est.stderr == 0.0


def test_solve_sinh_jump(zscore):
    spec = S.sinh_jump()
    for x, est in E.solve_dirichlet(spec, [(0.5,)], 20_000, SimConfig(dt_base=1e-4), 2):
        assert zscore(est, float(S.closed_form_sinh(x[0]))) < 4
        assert est.aux["jumped_outside_fraction"] > 0
        assert est.aux["boundary_jump_fraction"] < 0.01


def test_solve_errors():
    spec = S.disk_harmonic()
    with pytest.raises(PreconditionError):
        E.solve_dirichlet(spec, [(1.5, 0.0)], 10, CFG, 0)
    with pytest.raises(NonExit):
        E.solve_dirichlet(spec, [(0.0, 0.0)], 100, CFG.with_(max_steps=20), 0)


def test_resolvent_full_constant_one():
    spec = S.constant_kill(1.0)
    est = E.resolvent_full(spec, Constant(1.0), 2.0, (0.0, 0.0), 500, CFG, 0)
    # every path integrates the same deterministic discount
    assert abs(est.mean - 0.5) <= est.aux["tail_bound"] + 1e-9
    assert est.stderr < 1e-9


def test_resolvent_killed_constant_rate(zscore):
    lam, alpha = 2.0, 1.0
    spec = S.constant_kill(lam)
    est = E.resolvent_killed(spec, Constant(1.0), alpha, (0.0, 0.0), 20_000, CFG, 3)
    assert zscore(est, 1 / (lam + alpha)) < 4


def test_prop23_constant_rate(zscore):
    spec = S.constant_kill(1.0)
    reps = E.check_prop_2_3(spec, Constant(1.0), 1.0, [(0.0, 0.0), (0.5, 0.0)], 20_000, CFG, 4)
    for r in reps:
        assert r.passed
        assert zscore(r.lhs, 0.5) < 4 and zscore(r.rhs, 0.5) < 4


def test_prop23_alpha_zero_total_killing():
    spec = S.constant_kill(1.0)
    r, = E.check_prop_2_3(spec, Constant(1.0), 0.0, [(0.0, 0.0)], 5_000, CFG.with_(max_steps=30_000), 0)
    assert r.lhs.mean > 0.999 and r.passed


def test_prop23_no_jumps_is_zero():
    r, = E.check_prop_2_3(S.disk_harmonic(), Constant(1.0), 1.0, [(0.0, 0.0)], 100, CFG, 0)
    assert r.lhs.mean == r.rhs.mean == 0.0 and r.z_score == 0.0


def test_resolvent_identity_f_one(zscore):
    spec = S.constant_kill(1.0, target=(1.5, 0.0))
    r, = E.check_resolvent_identity(spec, Constant(1.0), 1.0, [(0.2, 0.0)], 4_000, CFG, 5)
    tail = r.lhs.aux["tail_bound"]
    # lhs is the same deterministic discount on every path
    assert abs(r.lhs.mean - 1.0) <= tail + 1e-9
    assert abs(r.rhs.mean - 1.0) <= 4 * r.rhs.stderr + tail
    assert r.passed


def test_resolvent_identity_box(zscore):
    spec, f = S.resolvent_box_scenario()
    reps = E.check_resolvent_identity(spec, f, 1.0, [(0.0, 0.0), (0.4, 0.3)], 8_000, CFG, 6)
    assert all(r.passed for r in reps)
    assert reps[0].rhs.aux["inner_stderrs"][0] > 0


def test_resolvent_identity_structural_cases():
    r, = E.check_resolvent_identity(S.disk_harmonic(), BoxIndicator((-0.5, -0.5), (0.5, 0.5)), 1.0, [(0.0, 0.0)],
                                    500, CFG, 0)
    assert r.z_score == 0.0
    dens = ProblemSpec(EllipticField.identity(2), DriftField.zero(2), Ball((0, 0), 1.0), BoundaryData(Constant(0.0), 0.0),
                       JumpKernel(Constant(1.0), RedistributionLaw((), UniformBall(1.0, (3.0, 0.0), 0.5))))
    with pytest.raises(UnsupportedKernel):
        E.check_resolvent_identity(dens, Constant(1.0), 1.0, [(0.0, 0.0)], 10, CFG, 0)


def test_exit_time_scaling(zscore):
    spec = S.disk_harmonic()
    res = E.exit_time_scaling(spec, (0.0, 0.0), [0.4, 0.2], 10_000, CFG, 7)
    for r, est in res.rows:
        assert zscore(est, r * r / 2) < 4
    assert 1.8 < res.slope < 2.2
    with pytest.raises(PreconditionError):
        E.exit_time_scaling(S.constant_kill(), (0, 0), [0.2], 10, CFG, 0)


def test_exit_time_drift_is_faster():
    base = S.disk_harmonic()
    drift = base.replace(drift=DriftField.constant((20.0, 0.0)))
    e0 = E.exit_time_scaling(base, (0, 0), [0.2], 5_000, CFG, 0).rows[0][1]
    e1 = E.exit_time_scaling(drift, (0, 0), [0.2], 5_000, CFG, 0).rows[0][1]
    assert e1.mean < e0.mean


def test_kato_decay():
    zero = E.small_ball_kato_decay(S.disk_harmonic(), [0.2, 0.1], [(0, 0)], 100, CFG, 0)
    assert all(e.mean == 0.0 for _, e in zero)
    prof = E.small_ball_kato_decay(S.constant_kill(1.0), [0.2, 0.1], [(0.0, 0.0), (0.3, 0.0)], 10_000, CFG, 0)
    (r1, e1), (r2, e2) = prof
    # E[min(tau, zeta)] with tau of mean r^2/2, dominated by tau at small r
    assert e1.mean == pytest.approx(r1**2 / 2, rel=0.05)
    assert e2.mean == pytest.approx(e1.mean / 4, rel=0.08)


def test_alpha_decay_constant_rate():
    rep = E.alpha_decay(S.constant_kill(1.0), [(0.0, 0.0), (0.5, 0.0)], [1, 2, 4, 8], 5_000, CFG, 0, horizon=20.0)
    assert rep.monotone
    assert rep.first_below_half == 2.0  # 1 / (1 + alpha) < 1/2 first at alpha = 2
    assert rep.sup_estimates[0].mean == pytest.approx(0.5, abs=0.03)
    none = E.alpha_decay(S.disk_harmonic(), [(0.0, 0.0)], [1, 2], 100, CFG, 0, horizon=5.0)
    assert none.first_below_half == 1.0 and all(e.mean == 0.0 for e in none.sup_estimates)


def test_conservativeness_small():
    spec = S.two_atom_kill()
    rep = E.conservativeness_check(spec, (0.0, 0.0), 2.0, 2.0, 2_000, CFG, 0)
    assert rep.failures == 0 and rep.passed
    assert rep.mean_jumps.mean > 0
