import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from consensus_attack.broker import FunctionObjective
from consensus_attack.ensemble import (
    CboConfig,
    Ensemble,
    MinibatchSampler,
    anisotropic_noise,
    cbo_step,
    ch_expected_step,
    compute_consensus,
    effective_sample_size,
    isotropic_noise,
    run_cbo,
    schedule_alpha,
)
from consensus_attack.exceptions import EmptyEnsembleError, InvalidConfigError, InvalidInputError
from consensus_attack.spaces import BoxSpace


# --- consensus point -----------------------------------------------------------

def test_consensus_equal_values_is_mean():
    point, w = compute_consensus(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2.0, 2.0]), 5.0)
    np.testing.assert_allclose(point, [0.5, 0.5])
    np.testing.assert_allclose(w.weights, [0.5, 0.5])


def test_consensus_large_gap_selects_best():
    point, _ = compute_consensus(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, 100.0]), 10.0)
    assert np.max(np.abs(point - [1.0, 0.0])) < 1e-12


def test_consensus_matches_naive_softmax():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((3, 4))
    v = np.array([0.3, 0.1, 0.7])
    # naive formula, written out independently
    e = np.exp(-2.0 * v)
    expected = (e[:, None] * X).sum(axis=0) / e.sum()
    point, _ = compute_consensus(X, v, 2.0)
    np.testing.assert_allclose(point, expected, rtol=0, atol=1e-14)


def test_consensus_stable_for_huge_values():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 3))
    v = rng.random(6)
    point, _ = compute_consensus(X, v * 1e5, 10.0)
    assert np.all(np.isfinite(point))
    shifted, _ = compute_consensus(X, v * 1e5 - np.min(v * 1e5), 10.0)
    assert np.max(np.abs(point - shifted)) < 1e-9


def test_consensus_errors():
    with pytest.raises(EmptyEnsembleError):
        compute_consensus(np.zeros((0, 2)), np.zeros(0), 1.0)
    with pytest.raises(InvalidInputError):
        compute_consensus(np.zeros((2, 2)), np.array([0.0, np.nan]), 1.0)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (7, 3), elements=st.floats(-10, 10)),
    arrays(np.float64, 7, elements=st.floats(-50, 50)),
    st.floats(1e-3, 1e3),
    st.floats(-100, 100),
)
def test_consensus_properties(X, v, alpha, shift):
    point, w = compute_consensus(X, v, alpha)
    assert abs(w.weights.sum() - 1.0) < 1e-12
    assert np.all(w.weights >= 0) and np.all(w.weights <= 1)
    # convex hull: inside the bounding box of the particles
    assert np.all(point >= X.min(axis=0) - 1e-9) and np.all(point <= X.max(axis=0) + 1e-9)
    moved, _ = compute_consensus(X, v + shift, alpha)
    assert np.max(np.abs(moved - point)) < 1e-9


def test_ess_of_uniform_weights():
    assert effective_sample_size(np.zeros(8), 3.0) == pytest.approx(8.0)


# --- alpha scheduling -----------------------------------------------------------

def test_schedule_alpha_constant_values_saturates_high():
    assert schedule_alpha(np.full(5, 0.3), 0.5) == 1e8


def test_schedule_alpha_full_ess_returns_min():
    assert schedule_alpha(np.array([0.0, 1.0, 3.0]), 1.0) == 1e-4


def _two_particle_root(target=1.5):
    def ess(a):
        return (1 + math.exp(-a)) ** 2 / (1 + math.exp(-2 * a))

    lo, hi = 0.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ess(mid) > target else (lo, mid)
    return 0.5 * (lo + hi)


def test_schedule_alpha_two_particles_matches_closed_form():
    alpha = schedule_alpha(np.array([0.0, 1.0]), 0.75)
    assert alpha == pytest.approx(_two_particle_root(), rel=1e-6)
    assert effective_sample_size(np.array([0.0, 1.0]), alpha) == pytest.approx(1.5, rel=1e-2)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(0, 5)), st.floats(0.05, 0.95))
def test_schedule_alpha_hits_target(values, eta):
    if np.ptp(values) == 0:
        return
    alpha = schedule_alpha(values, eta)
    ess = effective_sample_size(values, alpha)
    if 1e-4 < alpha < 1e8:
        assert ess == pytest.approx(eta * len(values), rel=1e-2)


def test_schedule_alpha_rejects_bad_eta():
    with pytest.raises(InvalidConfigError):
        schedule_alpha(np.array([0.0, 1.0]), 0.0)


# --- mini-batches ---------------------------------------------------------------

def test_minibatch_full_batch():
    assert sorted(MinibatchSampler(4, 4, 0).draw()) == [0, 1, 2, 3]


def test_minibatch_partition_two():
    s = MinibatchSampler(4, 2, 1)
    assert sorted(np.concatenate([s.draw(), s.draw()])) == [0, 1, 2, 3]


def test_minibatch_pass_is_permutation():
    s = MinibatchSampler(50, 10, 7)
    assert sorted(np.concatenate([s.draw() for _ in range(5)])) == list(range(50))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_minibatch_distinct_and_deterministic(n, b, seed):
    if b > n:
        with pytest.raises(InvalidConfigError):
            MinibatchSampler(n, b, seed)
        return
    a, c = MinibatchSampler(n, b, seed), MinibatchSampler(n, b, seed)
    for _ in range(5):
        x, y = a.draw(), c.draw()
        assert len(set(x.tolist())) == b
        np.testing.assert_array_equal(x, y)


# --- noise ---------------------------------------------------------------------

def test_anisotropic_zero_drift():
    assert np.all(anisotropic_noise(np.zeros((3, 4)), 1.0, 0) == 0)


def test_anisotropic_masks_components():
    out = anisotropic_noise(np.array([[3.0, 0.0]]), 1.0, 0)
    assert out[0, 1] == 0.0 and out[0, 0] != 0.0


def test_anisotropic_variance():
    rng = np.random.default_rng(11)
    n = 100_000
    samples = anisotropic_noise(np.full((n, 1), 2.0), 0.25, rng)[:, 0]
    var = samples.var()
    # variance of the sample variance of a N(0, 1) sample is 2 / n
    assert abs(var - 1.0) < 3 * math.sqrt(2.0 / n)


def test_isotropic_scales_by_row_norm():
    out = isotropic_noise(np.array([[3.0, 4.0], [0.0, 0.0]]), 1.0, 0)
    assert np.all(out[1] == 0)
    assert np.all(out[0] != 0)


# --- cbo step and loop -----------------------------------------------------------

def test_cbo_step_collapse():
    X = np.random.default_rng(0).standard_normal((5, 3))
    c = np.array([0.1, 0.2, 0.3])
    out = cbo_step(X, c, CboConfig(tau=0.5, lam=2.0, sigma=0.0))
    assert np.all(out == c)


def test_cbo_step_overshoot():
    out = cbo_step(np.array([[1.0, 0.0]]), np.zeros(2), CboConfig(tau=1.3, lam=1.0, sigma=0.0))
    np.testing.assert_allclose(out, [[-0.3, 0.0]], atol=1e-15)


def test_cbo_step_no_drift_no_noise():
    X = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_array_equal(cbo_step(X, np.zeros(2), CboConfig(lam=0.0, sigma=0.0)), X)


def test_cbo_step_ensemble_marks_stale():
    ens = Ensemble(np.ones((3, 2)), np.zeros(3), np.ones(3, dtype=bool))
    out = cbo_step(ens, np.zeros(2), CboConfig(sigma=0.0))
    assert not out.fresh.any()


def _quadratic(target):
    return lambda X: np.sum((np.atleast_2d(X) - target) ** 2, axis=1)


def test_run_cbo_quadratic_convergence():
    hits = 0
    for seed in range(20):
        target = np.random.default_rng(100 + seed).uniform(-0.5, 0.5, 10)
        rec = run_cbo(FunctionObjective(_quadratic(target)), BoxSpace(10, -1, 1), CboConfig(seed=seed),
                      max_iter=300)
        hits += np.max(np.abs(rec.trajectory[-1] - target)) < 1e-2
    assert hits >= 18


def test_run_cbo_zero_budget():
    rec = run_cbo(FunctionObjective(_quadratic(np.zeros(2)), budget=0), BoxSpace(2), CboConfig(seed=0))
    assert not rec.success and rec.queries_used == 0


def test_run_cbo_first_batch_success():
    obj = FunctionObjective(lambda X: np.full(len(X), -1.0), budget=1000, success_below=0.0)
    rec = run_cbo(obj, BoxSpace(3), CboConfig(seed=0))
    assert rec.success and rec.queries_used <= 50 and rec.success_query == 1


def test_run_cbo_deterministic():
    recs = [run_cbo(FunctionObjective(_quadratic(np.ones(3) * 0.2), budget=500), BoxSpace(3),
                    CboConfig(seed=5)) for _ in range(2)]
    for a, b in zip(recs[0].trajectory, recs[1].trajectory):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 300), st.integers(1, 12), st.integers(1, 12), st.integers(0, 1000))
def test_run_cbo_budget(q, n, b, seed):
    b = min(b, n)
    obj = FunctionObjective(_quadratic(np.zeros(2)), budget=q)
    rec = run_cbo(obj, BoxSpace(2), CboConfig(n_particles=n, batch_size=b, seed=seed), max_iter=1000)
    assert rec.queries_used <= q


def test_cbo_config_validation():
    with pytest.raises(InvalidConfigError):
        CboConfig(n_particles=5, batch_size=6)
    with pytest.raises(InvalidConfigError):
        CboConfig(tau=0.0)


# --- consensus-hopping expected step -------------------------------------------------

def test_ch_expected_step_constant_is_zero():
    step = ch_expected_step(lambda X: np.full(len(X), 3.0), np.ones(4), 0.1, 5.0, 1000, 0)
    assert np.all(step == 0.0)


def test_ch_expected_step_linear_closed_form():
    # E[exp(-a s xi) xi] / E[exp(-a s xi)] = -a s for xi ~ N(0, 1); times s gives -a s^2
    sigma, alpha, m = 0.1, 1.0, 1_000_000
    rng = np.random.default_rng(5)
    step = ch_expected_step(lambda X: X[:, 0], np.zeros(1), sigma, alpha, m, rng)
    # delta-method standard error of the self-normalized estimator
    se = sigma * math.sqrt((1 + (alpha * sigma) ** 2) * math.exp((alpha * sigma) ** 2) / m)
    assert abs(step[0] - (-alpha * sigma**2)) < 3 * se
