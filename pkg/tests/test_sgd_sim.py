import numpy as np
import pytest

from cbslab import kernels
from cbslab.problem import build_powerlaw_problem, excess_risk
from cbslab.risk_oracle import exact_excess_risk
from cbslab.sgd_sim import (
    Diverged,
    ReplicaDivergence,
    SGDConfig,
    mc_excess_risk,
    run_minibatch_sgd,
    run_record,
)
from conftest import diag_problem


def test_config_validation():
    with pytest.raises(ValueError):
        SGDConfig(3, 0.1, 10)
    with pytest.raises(ValueError):
        SGDConfig(2, -0.1, 10)
    assert SGDConfig(2, 0.1, 10).n_steps == 5


def test_fixed_point(backend):
    p = build_powerlaw_problem(6, 2.0, 3.0, 0.0)
    p = p.with_init(p.target)
    res = run_minibatch_sgd(p, SGDConfig(2, 0.2, 64, seed=4))
    np.testing.assert_allclose(res.average, p.target, rtol=0, atol=1e-14)
    assert excess_risk(p, res.average) < 1e-28
    mean, se = mc_excess_risk(p, SGDConfig(2, 0.2, 64), reps=4)
    assert mean < 1e-28 and se < 1e-28


def test_one_step_average_is_init(backend):
    p = diag_problem([1.0], [2.0], init=[0.5])
    res = run_minibatch_sgd(p, SGDConfig(1, 0.3, 1, seed=9))
    assert res.average[0] == 0.5
    assert res.final[0] != 0.5


def test_full_batch_risk(backend, small_problem):
    cfg = SGDConfig(64, 0.1, 64, seed=1)
    res = run_minibatch_sgd(small_problem, cfg)
    np.testing.assert_array_equal(res.average, small_problem.init)
    expected = float(small_problem.eigenvalues @ small_problem.init_error ** 2)
    assert excess_risk(small_problem, res.average) == pytest.approx(expected, rel=1e-14)


def test_single_pass_accounting(small_problem):
    for bsz, data in [(1, 1000), (8, 1024), (3, 3 * 70000)]:
        res = run_minibatch_sgd(small_problem, SGDConfig(bsz, 0.01, data))
        assert res.samples_drawn == data


def test_trajectory_matches_plain_run(backend, small_problem):
    cfg = SGDConfig(4, 0.1, 400, seed=2)
    plain = run_minibatch_sgd(small_problem, cfg)
    traced = run_minibatch_sgd(small_problem, SGDConfig(4, 0.1, 400, seed=2, record_trajectory=True))
    np.testing.assert_allclose(traced.final, plain.final, rtol=1e-12)
    np.testing.assert_allclose(traced.average, plain.average, rtol=1e-12)
    assert traced.trajectory.shape == (101, small_problem.dim)
    np.testing.assert_allclose(traced.trajectory[:-1].mean(axis=0), plain.average, rtol=1e-12)


def test_backends_same_average(small_problem):
    if "compiled" not in kernels.BACKENDS:
        pytest.skip("extension not built")
    out = []
    for name in ("python", "compiled"):
        old = kernels.BACKEND
        kernels.BACKEND = name
        try:
            out.append(run_minibatch_sgd(small_problem, SGDConfig(8, 0.2, 4096, seed=3)).average)
        finally:
            kernels.BACKEND = old
    np.testing.assert_allclose(out[0], out[1], rtol=1e-10)


def test_expected_first_step():
    p = diag_problem([1.0, 0.3, 0.1], [1.0, -2.0, 0.5], sigma2=0.5, init=[0.2, 0.1, -0.3])
    gamma, bsz, reps = 0.2, 2, 20_000
    w1 = np.array([run_minibatch_sgd(p, SGDConfig(bsz, gamma, bsz, seed=s)).final for s in range(reps)])
    lam = p.eigenvalues
    expected = (1 - gamma * lam) * p.init + gamma * lam * p.target
    se = w1.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(w1.mean(axis=0) - expected) < 3 * se)


def test_divergence_reports_step(backend, small_problem):
    with pytest.raises(Diverged) as info:
        run_minibatch_sgd(small_problem, SGDConfig(1, 50.0, 4000))
    assert 0 <= info.value.step < 4000
    with pytest.raises(ReplicaDivergence) as info:
        mc_excess_risk(small_problem, SGDConfig(1, 50.0, 4000), reps=3)
    assert info.value.n_diverged == 3


def test_mc_matches_oracle(backend):
    p = build_powerlaw_problem(8, 2.0, 3.0, 1.0)
    cfg = SGDConfig(8, 0.2, 1024, seed=0)
    mean, se = mc_excess_risk(p, cfg, reps=256)
    exact = exact_excess_risk(p, 1024, 0.2, 8).total_excess
    assert abs(mean - exact) < 3 * se


def test_mc_deterministic_and_jobs_invariant(small_problem):
    cfg = SGDConfig(4, 0.1, 256, seed=5)
    a = mc_excess_risk(small_problem, cfg, reps=8)
    assert a == mc_excess_risk(small_problem, cfg, reps=8)
    assert a == mc_excess_risk(small_problem, cfg, reps=8, jobs=3)
    with pytest.raises(ValueError):
        mc_excess_risk(small_problem, cfg, reps=1)


def test_standard_error_shrinks(small_problem):
    cfg = SGDConfig(4, 0.1, 256)
    ratios = []
    for trial in range(10):
        c = SGDConfig(cfg.batch_size, cfg.learning_rate, cfg.data_size, seed=10_000 * trial)
        _, se1 = mc_excess_risk(small_problem, c, reps=64)
        _, se2 = mc_excess_risk(small_problem, c, reps=128)
        ratios.append(se2 / se1)
    assert np.mean(ratios) == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_run_record_fields(small_problem):
    row = run_record(small_problem, SGDConfig(2, 0.1, 64, seed=3))
    assert {"d", "a", "b", "sigma2", "B", "gamma", "D", "seed", "excess_risk", "diverged"} <= set(row)
    assert row["diverged"] is False and row["excess_risk"] > 0
    bad = run_record(small_problem, SGDConfig(1, 50.0, 4000))
    assert bad["diverged"] is True
