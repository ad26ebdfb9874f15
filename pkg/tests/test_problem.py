import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbslab.problem import (
    build_powerlaw_problem,
    excess_risk,
    load_problem_config,
    make_rng,
    population_risk,
    problem_from_config,
    sample_batch,
    save_problem_config,
)
from conftest import diag_problem


def test_powerlaw_d4():
    p = build_powerlaw_problem(4, 2.0, 3.0, 1.0)
    np.testing.assert_allclose(p.eigenvalues, [1, 0.25, 1 / 9, 1 / 16], rtol=1e-15)
    assert p.target[0] == 1.0
    assert np.all(p.init == 0)


def test_powerlaw_d10_source_condition():
    p = build_powerlaw_problem(10, 2.0, 3.0, 1.0)
    assert p.eigenvalues[-1] == pytest.approx(0.01, rel=1e-15)
    assert p.eigenvalues[-1] * p.target[-1] ** 2 == pytest.approx(0.001, rel=1e-12)


@pytest.mark.parametrize("a,b", [(1.0, 3.0), (0.5, 3.0), (2.0, 1.0)])
def test_powerlaw_rejects_bad_exponents(a, b):
    with pytest.raises(ValueError):
        build_powerlaw_problem(4, a, b, 1.0)


@given(d=st.integers(1, 300), a=st.floats(1.01, 4.0), b=st.floats(1.01, 6.0))
def test_powerlaw_invariants(d, a, b):
    p = build_powerlaw_problem(d, a, b, 0.5)
    lam = p.eigenvalues
    assert np.all(np.diff(lam) <= 0) and np.all(lam > 0)
    i = np.arange(1, d + 1)
    if d > 1:
        np.testing.assert_allclose(lam[:-1] / lam[1:], ((i[1:]) / i[:-1]) ** a, rtol=1e-12)
    np.testing.assert_allclose(lam * p.target ** 2, i ** (-b), rtol=1e-12)


def test_problem_is_immutable(small_problem):
    with pytest.raises(ValueError):
        small_problem.eigenvalues[0] = 3.0


def test_zero_target_noise_free_responses():
    p = diag_problem([1.0, 0.5], [0.0, 0.0], sigma2=0.0)
    batch = sample_batch(p, 64, make_rng(3))
    assert batch.size == 64
    assert np.all(batch.responses == 0.0)


def test_same_seed_same_batch(small_problem):
    a = sample_batch(small_problem, 16, make_rng(7))
    b = sample_batch(small_problem, 16, make_rng(7))
    np.testing.assert_array_equal(a.covariates, b.covariates)
    np.testing.assert_array_equal(a.responses, b.responses)


def test_empirical_covariance():
    p = diag_problem([1.0, 0.25], [0.0, 0.0])
    x = sample_batch(p, 1_000_000, make_rng(0)).covariates
    cov = x.T @ x / x.shape[0]
    np.testing.assert_allclose(cov, np.diag([1.0, 0.25]), atol=0.01)


def test_population_risk_examples():
    p = diag_problem([1.0, 0.25], [1.0, 2.0], sigma2=1.0)
    assert population_risk(p, np.zeros(2)) == pytest.approx(3.0)
    assert population_risk(p, p.target) == pytest.approx(1.0)
    q = build_powerlaw_problem(50, 2.0, 3.0, 0.7)
    expected = 0.7 + np.sum(np.arange(1, 51, dtype=float) ** -3.0)
    assert population_risk(q, np.zeros(50)) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        population_risk(q, np.zeros(3))


@given(w=st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_risk_at_least_noise(w):
    p = build_powerlaw_problem(6, 2.0, 3.0, 0.3)
    w = np.asarray(w)
    assert population_risk(p, w) >= 0.3
    if not np.array_equal(w, p.target):
        assert excess_risk(p, w) > 0
    assert excess_risk(p, p.target) == 0.0


def test_monte_carlo_risk(small_problem):
    w = np.linspace(-1, 1, small_problem.dim)
    batch = sample_batch(small_problem, 200_000, make_rng(11))
    sq = (batch.covariates @ w - batch.responses) ** 2
    se = sq.std(ddof=1) / np.sqrt(sq.size)
    assert abs(sq.mean() - population_risk(small_problem, w)) < 3 * se


def test_config_roundtrip(tmp_path, small_problem):
    for name in ("p.yaml", "p.json"):
        path = tmp_path / name
        save_problem_config(small_problem, path)
        q = load_problem_config(path)
        np.testing.assert_array_equal(q.eigenvalues, small_problem.eigenvalues)
        np.testing.assert_array_equal(q.target, small_problem.target)
        assert q.spec_hash() == small_problem.spec_hash()
    again = problem_from_config(small_problem.to_config())
    assert again.spec_hash() == small_problem.spec_hash()
