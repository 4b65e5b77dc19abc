import csv
import itertools
from collections import Counter

import numpy as np
import pytest

from sbtm.dyngraph import DynamicNetwork
from sbtm.metrics import (
    AriReport,
    adjusted_rand_index,
    ari_per_step,
    bootstrap_band,
    duration_report,
    multi_step_fraction,
    qq_standardized,
)


def ari_pair_counting(p, q):
    """Adjusted Rand index from explicit pair agreements (no contingency table)."""
    n = len(p)
    a = b = c = d = 0
    for i, j in itertools.combinations(range(n), 2):
        same_p = p[i] == p[j]
        same_q = q[i] == q[j]
        a += same_p and same_q
        b += same_p and not same_q
        c += same_q and not same_p
        d += not same_p and not same_q
    total = a + b + c + d
    expected = (a + b) * (a + c) / total
    maximum = ((a + b) + (a + c)) / 2
    if maximum == expected:
        return 1.0 if (a + b) == (a + c) else 0.0
    return (a - expected) / (maximum - expected)


def test_identical_partitions():
    assert adjusted_rand_index([1, 1, 2, 3, 3], [1, 1, 2, 3, 3]) == 1.0
    assert adjusted_rand_index([1, 1, 2, 3, 3], [7, 7, 4, 9, 9]) == 1.0


def test_singletons_vs_one_block():
    assert adjusted_rand_index(np.arange(6), np.zeros(6)) == 0.0


def test_hand_computed_example():
    # contingency [[2, 0], [1, 1]]: sum C(nij,2)=1, rows 2, cols 3, C(4,2)=6
    # expected 2*3/6 = 1, max 2.5 -> (1 - 1) / 1.5 = 0
    assert adjusted_rand_index([1, 1, 2, 2], [1, 1, 1, 2]) == pytest.approx(0.0, abs=1e-15)
    # contingency [[2,1],[0,3]]: sum=1+3=4, rows 3+3=6, cols 1+6=7, C(6,2)=15
    expected = 6 * 7 / 15
    ref = (4 - expected) / (6.5 - expected)
    assert adjusted_rand_index([1, 1, 1, 2, 2, 2], [1, 1, 2, 2, 2, 2]) == pytest.approx(ref)


def test_random_pairs_match_pair_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        p = rng.integers(0, rng.integers(1, 6), n)
        q = rng.integers(0, rng.integers(1, 6), n)
        assert adjusted_rand_index(p, q) == pytest.approx(ari_pair_counting(p, q), abs=1e-12)


def test_symmetry_and_relabeling():
    rng = np.random.default_rng(3)
    p = rng.integers(1, 5, 50)
    q = rng.integers(1, 4, 50)
    perm = np.array([0, 3, 1, 4, 2])
    assert adjusted_rand_index(p, q) == pytest.approx(adjusted_rand_index(q, p))
    assert adjusted_rand_index(perm[p], q) == pytest.approx(adjusted_rand_index(p, q))


def test_mismatched_sets():
    with pytest.raises(ValueError):
        adjusted_rand_index([1, 2], [1, 2, 3])


def test_ari_per_step_skips_inactive():
    truth = np.array([[1, 1, 2, 0], [1, 2, 2, 2]])
    est = np.array([[2, 2, 1, 1], [1, 2, 2, 2]])
    assert np.allclose(ari_per_step(truth, est), [1.0, 1.0])


def test_bootstrap_band_brackets_mean():
    vals = np.random.default_rng(1).normal(size=(20, 3))
    mean, lo, hi = bootstrap_band(vals, n_boot=500)
    assert np.all(lo <= mean) and np.all(mean <= hi)
    const = np.ones((10, 2))
    m, lo, hi = bootstrap_band(const)
    assert np.all(lo == 1) and np.all(hi == 1)


def test_ari_report_csv(tmp_path):
    rep = AriReport.from_runs(np.full((4, 3), 0.5))
    path = tmp_path / "ari.csv"
    rep.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "ari", "lo", "hi"]
    assert len(rows) == 4 and float(rows[1][1]) == 0.5


def test_qq_calibration_on_normal_samples():
    rng = np.random.default_rng(2)
    passed = sum(qq_standardized(rng.standard_normal(10_000), 0, 1).ks_pvalue > 0.01
                 for _ in range(200))
    assert passed >= 0.95 * 200


def test_qq_constant_degenerate():
    assert qq_standardized(np.full(50, 3.0), 0.0, 1.0).degenerate


def test_qq_affine_invariance():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(300)
    a = qq_standardized(x, 0.0, 1.0)
    b = qq_standardized(2.5 * x - 4, -4.0, 2.5)
    assert np.allclose(a.sample_q, b.sample_q)
    assert a.ks_stat == pytest.approx(b.ks_stat)


def test_qq_plotting_positions():
    r = qq_standardized(np.array([0.0, 1.0]), 0.0, 1.0)
    from scipy.stats import norm

    assert np.allclose(r.normal_q, norm.ppf([0.25, 0.75]))


def test_qq_rejects_nonpositive_sd():
    with pytest.raises(ValueError):
        qq_standardized([1.0], 0.0, 0.0)


def _series_net(series):
    W = np.zeros((len(series), 2, 2), dtype=np.int8)
    W[:, 0, 1] = W[:, 1, 0] = series
    return DynamicNetwork(W, (0, 1), np.ones((len(series), 2), bool), directed=False)


def test_duration_single_edge():
    assert duration_report(_series_net([1, 1, 1])) == {3: 1.0}


def test_duration_pooling_invariance():
    net = _series_net([1, 0, 1, 1, 0, 1])
    assert duration_report([net, net]) == duration_report(net)


def test_duration_raw_and_normalized():
    net = _series_net([1, 0, 1, 1, 0, 1])
    raw = duration_report(net, normalize=False)
    assert raw == {1: 2.0, 2: 1.0}
    norm_ = duration_report(net)
    assert sum(norm_.values()) == pytest.approx(1.0)
    assert multi_step_fraction(norm_) == pytest.approx(1 / 3)


def test_duration_empty_network():
    W = np.zeros((3, 2, 2), dtype=np.int8)
    net = DynamicNetwork(W, (0, 1), np.ones((3, 2), bool))
    assert duration_report(net) == {}
    assert multi_step_fraction({}) == 0.0
