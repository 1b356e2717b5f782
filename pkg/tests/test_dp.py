import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import ForcedY
from dpgaze import dp
from dpgaze.errors import EmptyDataset
from dpgaze.features import FeatureCatalogue, FeatureDataset, FeatureEntry, FeatureSeries, default_catalogue
from dpgaze.synth import SynthSpec, generate


def _cat(m, hints=None):
    hints = hints or {}
    return FeatureCatalogue(tuple(FeatureEntry(f"f{i}", "synthetic", hints.get(i)) for i in range(m)))


def _series(values, pid="P1", doc="comic", gender="female"):
    return FeatureSeries(pid, doc, gender, np.asarray(values, dtype=float), None, None)


def _params(eps, delta, t_max, m=1):
    return dp.SanitizerParams(eps, 1, dp.FeatureRange(np.zeros(m), np.full(m, float(delta))), t_max)


# ---- range estimation --------------------------------------------------------

def test_ranges_scan():
    ds = FeatureDataset(_cat(1), [_series([[1], [3]]), _series([[2], [5]], pid="P2")])
    r = dp.estimate_ranges(ds)
    assert r.delta[0] == 4 and r.lo[0] == 1 and r.hi[0] == 5


def test_ranges_constant_feature():
    ds = FeatureDataset(_cat(1), [_series([[7], [7], [7]])])
    assert dp.estimate_ranges(ds).delta[0] == 0


def test_ranges_theoretical_hint_widens_only():
    ds = FeatureDataset(_cat(2, {0: (0.11, 2.75), 1: (0.5, 0.6)}), [_series([[0.2, 0.1], [1.0, 0.9]])])
    r = dp.estimate_ranges(ds)
    assert r.delta[0] == pytest.approx(2.64)
    assert (r.lo[1], r.hi[1]) == (0.1, 0.9)
    assert dp.estimate_ranges(ds, use_hints=False).delta[0] == pytest.approx(0.8)


def test_ranges_empty():
    with pytest.raises(EmptyDataset):
        dp.estimate_ranges(FeatureDataset(_cat(1), []))


# ---- subsampling -------------------------------------------------------------

def test_subsample_identity(rng):
    s = _series(rng.normal(size=(17, 3)))
    np.testing.assert_array_equal(dp.subsample(s, 1, rng).values, s.values)


def test_subsample_single_block_reaches_every_input():
    s = _series(np.arange(10.0)[:, None])
    seen = set()
    for seed in range(400):
        out = dp.subsample(s, 10, np.random.default_rng(seed)).values
        assert out.shape == (1, 1)
        seen.add(float(out[0, 0]))
    assert seen == set(map(float, range(10)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_subsample_length_and_block_membership(T, w, seed):
    m = 3
    values = np.arange(T * m, dtype=float).reshape(T, m)
    out = dp.subsample(_series(values), w, np.random.default_rng(seed)).values
    assert out.shape == (math.ceil(T / w), m)
    rows = (out - np.arange(m)) / m  # recover source row index
    for b in range(out.shape[0]):
        assert np.all((rows[b] >= b * w) & (rows[b] < min(T, (b + 1) * w)))


def test_subsample_features_drawn_independently():
    s = _series(np.tile(np.arange(10.0)[:, None], (1, 2)))
    out = np.array([dp.subsample(s, 10, np.random.default_rng(k)).values[0] for k in range(200)])
    assert np.mean(out[:, 0] != out[:, 1]) > 0.8


def test_default_subsampling_window():
    from dpgaze.experiments import ExperimentConfig
    assert ExperimentConfig().w == 10


# ---- mechanism ---------------------------------------------------------------

def test_lambda_arithmetic():
    params = _params(1.0, 2.64, 100)
    assert params.lambdas(1)[0] == pytest.approx(1 / 528)
    assert params.lambdas(1)[0] == pytest.approx(1.894e-3, rel=1e-3)


def test_forced_y_one_is_identity(rng):
    p = _series(rng.normal(size=(40, 4)))
    params = dp.SanitizerParams(2.0, 1, dp.FeatureRange(np.full(4, -3.0), np.full(4, 3.0)), 40)
    out = dp.sanitize_series(p, params, ForcedY(1.0))
    np.testing.assert_array_equal(out.values, p.values)


def test_forced_y_gives_literal_offset(rng):
    p = _series(np.zeros((5, 1)))
    params = _params(1.0, 2.0, 5)
    out = dp.sanitize_series(p, params, ForcedY(math.e))
    lam = 1.0 / (2 * 5 * 2.0)
    np.testing.assert_allclose(np.abs(out.values), 1.0 / (lam * 5))


def test_huge_epsilon_vanishing_noise():
    delta, t_max = 2.64, 60
    params = _params(1e6, delta, t_max)
    p = _series(np.linspace(0, 1, t_max)[:, None])
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        out = dp.sanitize_series(p, params, rng)
        worst = max(worst, float(np.max(np.abs(out.values - p.values))))
    assert worst < 1e-3 * delta


def test_constant_magnitude_per_vector(rng):
    p = _series(rng.normal(size=(50, 6)))
    params = dp.SanitizerParams(3.0, 1, dp.FeatureRange(np.full(6, -4.0), np.full(6, 4.0)), 50)
    diff = np.abs(dp.sanitize_series(p, params, rng).values - p.values)
    for i in range(6):
        np.testing.assert_allclose(diff[:, i], diff[0, i], rtol=1e-9)


def test_t_max_must_cover_series():
    with pytest.raises(ValueError):
        dp.sanitize_series(_series(np.zeros((10, 1))), _params(1.0, 1.0, 5), np.random.default_rng(0))


def _offsets(lam_eps, delta, t_max, n, seed):
    """Signed per-vector offsets from the mechanism (one draw per vector)."""
    rng = np.random.default_rng(seed)
    params = _params(lam_eps, delta, t_max)
    p = _series(np.zeros((t_max, 1)))
    out = []
    for _ in range(n):
        r = dp.sanitize_series(p, params, rng).values[:, 0]
        out.append(r)
    return np.array(out)


def _oracle_magnitudes(lam, t_max, n, seed):
    # inverse-CDF exponential draws, independent of Generator.exponential
    u = np.random.default_rng(seed).random(n)
    y = -np.log1p(-u) / lam
    return np.abs(np.log(y)) / (lam * t_max)


def test_noise_magnitude_law_and_sign_balance():
    eps, delta, t_max = 2.0, 3.0, 20
    lam = eps / (2 * t_max * delta)
    draws = _offsets(eps, delta, t_max, 10_000, seed=1)
    magnitudes = np.abs(draws[:, 0])
    oracle = _oracle_magnitudes(lam, t_max, 10_000, seed=2)
    assert stats.ks_2samp(magnitudes, oracle).statistic < 0.05
    signs = np.sign(draws[:, :].ravel())
    assert 0.48 <= np.mean(signs > 0) <= 0.52


def _median_and_sigma(samples, batches=20):
    med = np.median(samples)
    parts = np.array_split(samples, batches)
    sigma = np.std([np.median(b) for b in parts], ddof=1) / math.sqrt(batches)
    return med, sigma


def test_subsampling_shrinks_median_noise():
    eps, delta, T, w, n = 1.0, 1.0, 100, 10, 10_000
    full = _oracle_magnitudes(eps / (2 * T * delta), T, n, 3)
    t_sub = math.ceil(T / w)
    sub = np.abs(_offsets(eps, delta, t_sub, n, seed=4)[:, 0])
    m_full, s_full = _median_and_sigma(full)
    m_sub, s_sub = _median_and_sigma(sub)
    assert m_sub + 3 * math.hypot(s_full, s_sub) < m_full


def test_larger_epsilon_never_noisier():
    delta, t_max, n = 1.0, 50, 10_000
    meds = []
    for k, eps in enumerate([0.5, 1.0, 2.0, 5.0]):
        assert eps / (2 * t_max * delta) * t_max >= 0.25
        mag = np.abs(_offsets(eps, delta, t_max, n, seed=10 + k)[:, 0])
        meds.append(_median_and_sigma(mag))
    for (m_lo, s_lo), (m_hi, s_hi) in zip(meds, meds[1:]):
        assert m_hi <= m_lo + 3 * math.hypot(s_lo, s_hi)


# ---- dataset level -----------------------------------------------------------

def _small_dataset(seed=0):
    return generate(SynthSpec(n=4, T=25, m=38, seed=seed))


def test_total_epsilon_equal_budgets():
    ds = _small_dataset()
    _, receipt = dp.sanitize_dataset(ds, dp.SanitizerParams(15.0, 10), seed=1)
    assert receipt.total_epsilon == 570.0
    assert receipt.t_max == 3 and receipt.w == 10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=4, max_size=4))
def test_total_epsilon_arbitrary_budgets(eps):
    ds = generate(SynthSpec(n=2, T=4, m=4, seed=3))
    _, receipt = dp.sanitize_dataset(ds, dp.SanitizerParams(eps, 2), seed=0)
    assert receipt.total_epsilon == math.fsum(eps)
    assert receipt.epsilons == eps


def test_identity_when_w1_and_y1(monkeypatch):
    ds = _small_dataset()
    monkeypatch.setattr(dp, "stream", lambda seed, *keys: ForcedY(1.0, seed=sum(keys)))
    out, _ = dp.sanitize_dataset(ds, dp.SanitizerParams(1.0, 1), seed=5)
    for a, b in zip(ds.series, out.series):
        np.testing.assert_array_equal(a.values, b.values)


def test_same_seed_bit_identical_and_labels_pass_through():
    ds = _small_dataset()
    a, ra = dp.sanitize_dataset(ds, dp.SanitizerParams(5.0, 3), seed=99)
    b, rb = dp.sanitize_dataset(ds, dp.SanitizerParams(5.0, 3), seed=99)
    c, _ = dp.sanitize_dataset(ds, dp.SanitizerParams(5.0, 3), seed=100)
    assert ra.to_text() == rb.to_text()
    for x, y, z, orig in zip(a.series, b.series, c.series, ds.series):
        assert x.values.tobytes() == y.values.tobytes()
        assert x.values.tobytes() != z.values.tobytes()
        assert (x.participant_id, x.document, x.gender) == (orig.participant_id, orig.document, orig.gender)
        assert len(x) == math.ceil(len(orig) / 3)


def test_constant_feature_passes_through():
    ds = _small_dataset()
    for s in ds.series:
        s.values[:, 5] = 7.0
    out, receipt = dp.sanitize_dataset(ds, dp.SanitizerParams(1.0, 1), seed=0)
    assert receipt.constant_features == ["f05"]
    for s in out.series:
        assert np.all(s.values[:, 5] == 7.0)
        assert not np.all(s.values[:, 4] == s.values[0, 4])


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        dp.sanitize_dataset(FeatureDataset(default_catalogue(), []), dp.SanitizerParams(1.0), 0)


def test_invalid_epsilon():
    with pytest.raises(ValueError):
        dp.sanitize_dataset(_small_dataset(), dp.SanitizerParams(0.0), 0)


def test_receipt_text_roundtrip():
    _, receipt = dp.sanitize_dataset(_small_dataset(), dp.SanitizerParams(15.0, 10), seed=1)
    text = receipt.to_text()
    assert text.startswith("epsilon_per_feature=15.0\ntotal_epsilon=570.0\nw=10\nt_max=3\nseed=1\n")
    assert "range.f00=" in text
    back = dp.PrivacyReceipt.from_text(text)
    assert back.total_epsilon == 570.0 and back.feature_names == receipt.feature_names
    np.testing.assert_array_equal(back.ranges.lo, receipt.ranges.lo)


def test_derived_streams_are_order_independent():
    a = dp.stream(5, 1, 2, 3).random(4)
    dp.stream(5, 1, 2, 4).random(10)
    np.testing.assert_array_equal(a, dp.stream(5, 1, 2, 3).random(4))
    assert dp.derive_seed(1, 2) == dp.derive_seed(1, 2) != dp.derive_seed(1, 3)
