"""Evaluation: adjusted Rand index, normality diagnostics and edge-duration
histograms."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import comb

from .dyngraph import DynamicNetwork, edge_durations


def adjusted_rand_index(p1, p2) -> float:
    """Hubert-Arabie adjusted Rand index from the contingency table."""
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    if p1.shape != p2.shape or p1.ndim != 1:
        raise ValueError("partitions must label the same elements")
    n = p1.size
    _, i1 = np.unique(p1, return_inverse=True)
    _, i2 = np.unique(p2, return_inverse=True)
    table = np.zeros((i1.max() + 1, i2.max() + 1), dtype=np.int64)
    np.add.at(table, (i1, i2), 1)
    sum_cells = comb(table, 2).sum()
    sum_rows = comb(table.sum(axis=1), 2).sum()
    sum_cols = comb(table.sum(axis=0), 2).sum()
    total = comb(n, 2)
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both partitions trivial in the same way (or n < 2)
        return 1.0 if sum_rows == sum_cols else 0.0
    return float((sum_cells - expected) / (max_index - expected))


def ari_per_step(truth, estimate, active=None) -> np.ndarray:
    """ARI at each step over nodes active at that step."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    out = []
    for t in range(truth.shape[0]):
        sel = truth[t] > 0 if active is None else np.asarray(active[t], bool)
        out.append(adjusted_rand_index(truth[t][sel], estimate[t][sel]))
    return np.array(out)


def bootstrap_band(values, n_boot=1000, level=0.95, seed=0):
    """Mean and percentile bootstrap interval of the mean over runs (axis 0)."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.shape[0], size=(n_boot, values.shape[0]))
    boots = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2
    lo, hi = np.quantile(boots, [alpha, 1 - alpha], axis=0)
    return values.mean(axis=0), lo, hi


@dataclass
class AriReport:
    values: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_runs(cls, per_run, n_boot=1000, seed=0) -> "AriReport":
        """``per_run`` has shape ``(runs, T)``."""
        values = np.atleast_2d(np.asarray(per_run, dtype=float))
        mean, lo, hi = bootstrap_band(values, n_boot=n_boot, seed=seed)
        return cls(values, mean, lo, hi)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "ari", "lo", "hi"])
            for t, (m, lo, hi) in enumerate(zip(self.mean, self.lo, self.hi), start=1):
                w.writerow([t, m, lo, hi])


@dataclass
class NormalityReport:
    standardized: np.ndarray
    sample_q: np.ndarray
    normal_q: np.ndarray
    ks_stat: float
    ks_pvalue: float
    degenerate: bool

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_q", "normal_q"])
            w.writerows(zip(self.sample_q, self.normal_q))


def qq_standardized(y, means, sds) -> NormalityReport:
    """Standardise ``(y - mean) / sd`` and pair the sorted values with
    standard-normal quantiles at plotting positions ``(i - 0.5) / n``."""
    y = np.asarray(y, dtype=float).ravel()
    means = np.broadcast_to(np.asarray(means, dtype=float), y.shape)
    sds = np.broadcast_to(np.asarray(sds, dtype=float), y.shape)
    if np.any(sds <= 0):
        raise ValueError("standard deviations must be positive")
    z = (y - means) / sds
    zs = np.sort(z)
    n = zs.size
    nq = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    degenerate = bool(n < 2 or np.ptp(zs) == 0)
    if n == 0:
        return NormalityReport(z, zs, nq, float("nan"), float("nan"), True)
    ks = stats.kstest(zs, "norm")
    return NormalityReport(z, zs, nq, float(ks.statistic), float(ks.pvalue), degenerate)


def duration_report(nets, normalize=True) -> dict:
    """Pooled histogram of edge durations over one or many networks.

    Returns ``{duration: frequency}`` sorted by duration; frequencies sum to 1
    when ``normalize`` else they are run counts.
    """
    if isinstance(nets, DynamicNetwork):
        nets = [nets]
    pooled = Counter()
    for net in nets:
        pooled.update(edge_durations(net))
    total = sum(pooled.values())
    if normalize and total:
        return {d: pooled[d] / total for d in sorted(pooled)}
    return {d: float(pooled[d]) for d in sorted(pooled)}


def multi_step_fraction(hist: dict) -> float:
    """Share of edge runs lasting two or more steps."""
    total = sum(hist.values())
    return sum(v for d, v in hist.items() if d >= 2) / total if total else 0.0


def write_duration_csv(hist: dict, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["duration", "frequency"])
        for d in sorted(hist):
            w.writerow([d, hist[d]])
