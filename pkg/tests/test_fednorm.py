"""Normalization-phase tests.

Oracle: brute_force_stats recomputes the no-noise full-participation
aggregate directly from each participant's raw matrix with numpy's own
mean/var, keeping the fixed W denominator and per-query abstention.
"""

from __future__ import annotations

import numpy as np
import pytest

from fedtrace.errors import InsufficientData, InvalidInput
from fedtrace.features import FeatureVector
from fedtrace.fednorm import (
    ColumnMoments,
    NormStats,
    VARIANCE_FLOOR,
    dp_fed_norm,
    exact_stats,
    load_norm_stats,
    local_mean,
    local_var,
    normalize,
    normalize_matrix,
    participant_moments,
    save_norm_stats,
)
from fedtrace.privacy import PrivacyLedger


class FakeParticipant:
    """Stands in for a participant dataset: just a feature matrix."""

    def __init__(self, rows):
        self.features = np.asarray(rows, dtype=np.float64).reshape(-1, 3)


# ---------------------------------------------------------------- oracle

def brute_force_stats(matrices, clip_mu, clip_var):
    """No-noise, q=1 aggregate: mean over W of clipped statistics."""
    w = len(matrices)
    n_features = matrices[0].shape[1] if matrices[0].size else 3
    mu = np.zeros(n_features)
    s = np.zeros(n_features)
    for x in matrices:
        if x.shape[0] >= 1:
            mu += np.minimum(x.mean(axis=0), clip_mu)
        if x.shape[0] >= 2:
            s += np.minimum(x.var(axis=0, ddof=1), clip_var)
    return mu / w, s / w


def make_participants(rng, w=9, include_empty=True, include_single=True):
    parts = []
    for i in range(w):
        if include_empty and i == 2:
            rows = np.empty((0, 3))
        elif include_single and i == 5:
            rows = rng.normal(size=(1, 3)) * 3
        else:
            rows = rng.normal(loc=rng.uniform(-2, 2), size=(rng.integers(2, 30), 3)) * 2
        parts.append(FakeParticipant(rows))
    return parts


# ---------------------------------------------------------------- local ops

def test_local_mean_examples():
    p = FakeParticipant(np.array([[1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]]))
    assert local_mean(p, 0, 10.0) == 2.0
    assert local_mean(p, 1, 10.0) == 0.0
    assert local_mean(FakeParticipant(np.array([[100.0, 0, 0]])), 0, 5.0) == 5.0
    with pytest.raises(InsufficientData):
        local_mean(FakeParticipant(np.empty((0, 3))), 0, 1.0)


def test_local_var_examples():
    p = FakeParticipant(np.array([[1.0, 0, 0], [3.0, 0, 0]]))
    assert local_var(p, 0, 10.0) == 2.0
    zeros = FakeParticipant(np.zeros((3, 3)))
    assert local_var(zeros, 0, 10.0) == 0.0
    wide = FakeParticipant(np.array([[0.0, 0, 0], [100.0, 0, 0]]))
    assert local_var(wide, 0, 1.0) == 1.0
    with pytest.raises(InsufficientData):
        local_var(FakeParticipant(np.array([[1.0, 0, 0]])), 0, 1.0)


# ---------------------------------------------------------------- aggregate

def test_dp_fed_norm_matches_brute_force_no_noise():
    rng = np.random.default_rng(10)
    parts = make_participants(rng)
    clip_mu, clip_var = 0.8, 1.7
    stats = dp_fed_norm(parts, q=1.0, z=0.0, clip_mu=clip_mu, clip_var=clip_var,
                        rng=np.random.default_rng(0))
    mu, s = brute_force_stats([p.features for p in parts], clip_mu, clip_var)
    np.testing.assert_allclose(stats.mu, mu, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(stats.s, np.maximum(s, VARIANCE_FLOOR),
                               rtol=1e-12, atol=1e-12)


def test_dp_fed_norm_identical_constant_participants():
    parts = [FakeParticipant(np.full((1, 3), 0.37)) for _ in range(6)]
    stats = dp_fed_norm(parts, q=1.0, z=0.0, clip_mu=1.0, clip_var=1.0,
                        rng=np.random.default_rng(0))
    np.testing.assert_allclose(stats.mu, 0.37, rtol=1e-12)


def test_dp_fed_norm_unbiased_under_sampling():
    # Monte Carlo over the participation coins, no noise: the mean of the
    # estimator converges to the full-participation brute-force value.
    rng = np.random.default_rng(3)
    parts = make_participants(rng, w=8)
    clip_mu, clip_var = 0.9, 1.2
    target_mu, target_s = brute_force_stats([p.features for p in parts], clip_mu, clip_var)
    mu_sum = np.zeros(3)
    s_sum = np.zeros(3)
    n_trials = 3000
    moments = participant_moments(parts)
    for t in range(n_trials):
        stats = dp_fed_norm(parts, q=0.4, z=0.0, clip_mu=clip_mu, clip_var=clip_var,
                            rng=np.random.default_rng(1000 + t), moments=moments)
        mu_sum += stats.mu
        s_sum += stats.s
    # loose 4-sigma Monte Carlo band: per-coin variance <= stat^2 / q
    assert np.abs(mu_sum / n_trials - target_mu).max() < 0.05
    assert np.abs(s_sum / n_trials - target_s).max() < 0.07


def test_dp_fed_norm_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(4)
    parts = make_participants(rng)
    a = dp_fed_norm(parts, q=0.5, z=1.3, rng=np.random.default_rng(77))
    b = dp_fed_norm(parts, q=0.5, z=1.3, rng=np.random.default_rng(77))
    c = dp_fed_norm(parts, q=0.5, z=1.3, rng=np.random.default_rng(78))
    np.testing.assert_array_equal(a.mu, b.mu)
    np.testing.assert_array_equal(a.s, b.s)
    assert not np.array_equal(a.mu, c.mu)


def test_dp_fed_norm_charges_two_queries_per_feature():
    rng = np.random.default_rng(5)
    parts = make_participants(rng)
    ledger = PrivacyLedger()
    before = ledger.total_rdp
    dp_fed_norm(parts, q=0.1, z=2.0, rng=np.random.default_rng(0), ledger=ledger)
    after = ledger.total_rdp
    assert (after > before).all()
    assert sum(e.count for e in ledger.entries) == 2 * 3

    # the charge is 2F regardless of sampling outcomes: same with tiny q
    ledger2 = PrivacyLedger()
    dp_fed_norm(parts, q=1e-6, z=2.0, rng=np.random.default_rng(0), ledger=ledger2)
    assert sum(e.count for e in ledger2.entries) == 2 * 3


def test_dp_fed_norm_variance_floor_and_validation():
    rng = np.random.default_rng(6)
    parts = make_participants(rng)
    stats = dp_fed_norm(parts, q=1.0, z=50.0, rng=np.random.default_rng(1))
    assert (stats.s >= VARIANCE_FLOOR).all()

    with pytest.raises(InvalidInput):
        dp_fed_norm(parts, q=0.0, z=1.0, rng=np.random.default_rng(0))
    with pytest.raises(InvalidInput):
        dp_fed_norm(parts, q=0.5, z=-1.0, rng=np.random.default_rng(0))
    with pytest.raises(InvalidInput):
        dp_fed_norm(parts, q=0.5, z=1.0, clip_mu=0.0, rng=np.random.default_rng(0))
    with pytest.raises(InvalidInput):
        dp_fed_norm(parts, q=0.5, z=1.0, rng=None)
    with pytest.raises(InvalidInput):
        participant_moments([])


def test_moments_agree_with_local_ops():
    rng = np.random.default_rng(8)
    parts = make_participants(rng, include_empty=False, include_single=False)
    moments = participant_moments(parts)
    for i, p in enumerate(parts):
        for f in range(3):
            assert moments.means[i, f] == pytest.approx(local_mean(p, f, np.inf), rel=1e-12)
            assert moments.variances[i, f] == pytest.approx(local_var(p, f, np.inf), rel=1e-12)
    with pytest.raises(InvalidInput):
        ColumnMoments(np.zeros(2, dtype=np.int64), np.zeros((3, 4)), np.zeros((3, 4)))


# ---------------------------------------------------------------- normalize

def test_normalize_formula_examples():
    stats = NormStats(np.zeros(3), np.full(3, 4.0), 1.0, 1.0)
    v = np.full(3, 2.0)
    np.testing.assert_allclose(normalize(v, stats, mode="var"), 0.5)
    np.testing.assert_allclose(normalize(v, stats, mode="std"), 1.0)
    np.testing.assert_allclose(normalize(stats.mu.copy(), stats, mode="std"), 0.0)
    np.testing.assert_allclose(normalize(stats.mu.copy(), stats, mode="var"), 0.0)

    vec = FeatureVector(np.full(3, 2.0), True, frozenset({"canvas"}))
    out = normalize(vec, stats, mode="std")
    assert isinstance(out, FeatureVector)
    assert out.label and out.fp_types == frozenset({"canvas"})
    np.testing.assert_allclose(out.values, 1.0)

    with pytest.raises(InvalidInput):
        normalize(np.zeros(2), stats)
    with pytest.raises(InvalidInput):
        normalize(np.zeros(3), stats, mode="mean")
    with pytest.raises(InvalidInput):
        normalize_matrix(np.zeros((2, 2)), stats)


def test_exact_stats_standardize_to_unit_variance():
    rng = np.random.default_rng(9)
    x = rng.normal(loc=3.0, scale=2.5, size=(400, 5)) ** 2
    stats = exact_stats(x)
    z = normalize_matrix(x, stats, mode="std")
    assert np.abs(z.mean(axis=0)).max() < 1e-9
    np.testing.assert_allclose(z.var(axis=0, ddof=1), 1.0, atol=1e-6)

    with pytest.raises(InvalidInput):
        exact_stats(x[:1])


def test_normalize_matrix_preserves_float32():
    x = np.random.default_rng(0).normal(size=(50, 4)).astype(np.float32)
    stats = exact_stats(x)
    out = normalize_matrix(x, stats)
    assert out.dtype == np.float32


def test_constant_column_hits_floor_and_stays_total():
    x = np.ones((10, 2))
    stats = exact_stats(x)
    assert stats.s[0] == VARIANCE_FLOOR
    z = normalize_matrix(x, stats)
    assert np.isfinite(z).all()
    np.testing.assert_allclose(z, 0.0)


def test_norm_stats_round_trip(tmp_path):
    stats = NormStats(np.array([0.5, -1.0]), np.array([2.0, 0.25]), 1.0, 3.0)
    path = tmp_path / "normstats.json"
    save_norm_stats(stats, path)
    loaded = load_norm_stats(path)
    np.testing.assert_array_equal(loaded.mu, stats.mu)
    np.testing.assert_array_equal(loaded.s, stats.s)
    assert loaded.clip_mu == 1.0 and loaded.clip_var == 3.0

    with pytest.raises(InvalidInput):
        NormStats(np.zeros(2), np.zeros(2), 1.0, 1.0)
    with pytest.raises(InvalidInput):
        NormStats(np.zeros(2), np.ones(3), 1.0, 1.0)
