"""Static stochastic block models: sampling, ML fitting, spectral start and
single-snapshot local search.

Class labels are 1..k for active nodes and 0 for nodes to ignore.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.special import xlogy
from sklearn.cluster import KMeans

log = logging.getLogger(__name__)


class UndefinedBlockError(ValueError):
    pass


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_sbm(classes, theta, seed=None, directed=True) -> np.ndarray:
    """Draw ``w_ij ~ Bernoulli(theta[c_i, c_j])`` independently.

    Nodes with class 0 get empty rows and columns.
    """
    rng = _rng(seed)
    c = np.asarray(classes)
    theta = np.asarray(theta, dtype=float)
    N = c.size
    P = np.zeros((N, N))
    act = c > 0
    P[np.ix_(act, act)] = theta[np.ix_(c[act] - 1, c[act] - 1)]
    np.fill_diagonal(P, 0.0)
    W = (rng.random((N, N)) < P).astype(np.int8)
    if not directed:
        W = np.triu(W, 1)
        W = W + W.T
    return W


def block_counts(W, classes, k, directed=True):
    """Edge counts ``m`` and pair counts ``n`` per block.

    Undirected counts use unordered pairs: diagonal blocks hold
    ``s(s-1)/2`` pairs and only the upper triangle ``a <= b`` is filled.
    """
    c = np.asarray(classes)
    W = np.asarray(W)
    onehot = np.zeros((c.size, k))
    act = c > 0
    onehot[np.flatnonzero(act), c[act] - 1] = 1.0
    m = onehot.T @ W @ onehot
    s = onehot.sum(axis=0)
    n = np.outer(s, s) - np.diag(s)
    if not directed:
        m = np.triu(m) - np.diag(np.diag(m)) / 2
        n = np.triu(n) - np.diag(np.diag(n)) / 2
    return m, n


def estimate_theta_ml(W, classes, k=None, directed=True) -> np.ndarray:
    """Smoothed ML block probabilities ``(m + 0.5) / (n + 1)``.

    Smoothing keeps every estimate strictly inside (0, 1) so its logit is
    finite. Undirected estimates are returned as a symmetric matrix.
    """
    c = np.asarray(classes)
    k = int(k if k is not None else c.max())
    sizes = np.bincount(c[c > 0], minlength=k + 1)[1:]
    if np.any(sizes == 0):
        raise UndefinedBlockError(f"empty classes: {np.flatnonzero(sizes == 0) + 1}")
    m, n = block_counts(W, c, k, directed)
    theta = (m + 0.5) / (n + 1.0)
    if not directed:
        theta = np.triu(theta) + np.triu(theta, 1).T
    return theta


def block_loglik(m, n) -> float:
    """Profile Bernoulli log-likelihood at the unsmoothed ML estimate."""
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, m / np.where(n > 0, n, 1), 0.0)
    return float(np.sum(xlogy(m, p) + xlogy(n - m, 1 - p)))


def bernoulli_loglik(W, classes, theta, directed=True) -> float:
    """Log-likelihood of ``W`` under block matrix ``theta`` (any theta)."""
    k = np.asarray(theta).shape[0]
    m, n = block_counts(W, classes, k, directed)
    theta = np.asarray(theta, dtype=float)
    mask = np.triu(np.ones((k, k), bool)) if not directed else np.ones((k, k), bool)
    return float(np.sum((xlogy(m, theta) + xlogy(n - m, 1 - theta))[mask]))


def singular_values(W, n=None) -> np.ndarray:
    """Singular values of the adjacency matrix, largest first (scree data)."""
    s = np.linalg.svd(np.asarray(W, dtype=float), compute_uv=False)
    return s if n is None else s[:n]


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel so classes appear in order of first occurrence, 1-based."""
    out = np.zeros_like(labels)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping) + 1
        out[i] = mapping[lab]
    return out


def spectral_init(W, k, seed=0, active=None) -> np.ndarray:
    """Adjacency spectral embedding followed by k-means.

    Undirected (symmetric) snapshots embed each active node as
    ``U_k |L_k|^{1/2}`` from the ``k`` largest eigenvalues of the active
    submatrix; directed snapshots use ``[U_k S_k^{1/2}, V_k S_k^{1/2}]`` from
    its rank-k SVD. Inactive nodes get label 0.
    """
    W = np.asarray(W, dtype=float)
    N = W.shape[0]
    if active is None:
        active = np.ones(N, dtype=bool)
    active = np.asarray(active, dtype=bool)
    idx = np.flatnonzero(active)
    if k < 1 or k > idx.size:
        raise ValueError(f"k={k} must be between 1 and the number of active nodes")
    labels = np.zeros(N, dtype=np.int64)
    if k == 1:
        labels[idx] = 1
        return labels
    A = W[np.ix_(idx, idx)]
    if np.array_equal(A, A.T):
        # the largest algebraic eigenvalues carry assortative block structure;
        # large negative ones are mostly noise in sparse graphs
        vals, vecs = np.linalg.eigh(A)
        top = vals[::-1][:k]
        X = vecs[:, ::-1][:, :k] * np.sqrt(np.abs(top))
        scale = np.abs(vals).max()
        degenerate = np.abs(top[-1]) <= 1e-10 * max(scale, 1.0)
    else:
        U, s, Vt = np.linalg.svd(A)
        root = np.sqrt(s[:k])
        X = np.hstack([U[:, :k] * root, Vt[:k].T * root])
        degenerate = s[k - 1] <= 1e-10 * max(s[0], 1.0)
    if degenerate:
        warnings.warn(
            f"adjacency rank is below k={k}; embedding is degenerate", RuntimeWarning
        )
    km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(X)
    labels[idx] = _canonical(km.labels_)
    return labels


class _BlockTracker:
    """Incremental block edge/pair counts for single-node moves.

    Counts are directed (ordered pairs); for symmetric ``W`` this doubles the
    undirected likelihood without moving its maximiser.
    """

    def __init__(self, W, labels, k):
        self.W = np.asarray(W, dtype=np.int64)
        self.k = k
        self.labels = labels.copy()
        self.act = labels > 0
        onehot = np.zeros((labels.size, k), dtype=np.int64)
        onehot[np.flatnonzero(self.act), labels[self.act] - 1] = 1
        self.onehot = onehot
        self.e_out = self.W @ onehot
        self.e_in = self.W.T @ onehot
        self.M = onehot.T @ self.W @ onehot
        self.s = onehot.sum(axis=0)

    def _pairs(self, s):
        return np.outer(s, s) - np.diag(s)

    def score(self) -> float:
        return block_loglik(self.M, self._pairs(self.s))

    def moved(self, i, b):
        a = self.labels[i] - 1
        b = b - 1
        M = self.M.copy()
        M[a, :] -= self.e_out[i]
        M[:, a] -= self.e_in[i]
        M[b, :] += self.e_out[i]
        M[:, b] += self.e_in[i]
        s = self.s.copy()
        s[a] -= 1
        s[b] += 1
        return M, s

    def move_score(self, i, b) -> float:
        M, s = self.moved(i, b)
        return block_loglik(M, self._pairs(s))

    def apply(self, i, b):
        a0 = self.labels[i] - 1
        self.M, self.s = self.moved(i, b)
        col = self.W[:, i]
        row = self.W[i, :]
        self.e_out[:, a0] -= col
        self.e_out[:, b - 1] += col
        self.e_in[:, a0] -= row
        self.e_in[:, b - 1] += row
        self.labels[i] = b


def static_local_search(W, k, init, seed=0, max_sweeps=100, trace=None, directed=None):
    """Hill climbing over single-node relabelings of the Bernoulli block
    likelihood, first-improvement, node order shuffled each sweep.

    Stops after a sweep with no improving move. Moves that would empty a class
    are not considered. Returns ``(labels, theta_hat)``; if ``trace`` is a
    list, the likelihood after every accepted move is appended to it.
    """
    rng = _rng(seed)
    labels = np.asarray(init, dtype=np.int64).copy()
    tr = _BlockTracker(W, labels, k)
    current = tr.score()
    if trace is not None:
        trace.append(current)
    nodes = np.flatnonzero(labels > 0)
    for _ in range(max_sweeps):
        improved = False
        for i in rng.permutation(nodes):
            a = tr.labels[i]
            if tr.s[a - 1] <= 1:
                continue
            for b in range(1, k + 1):
                if b == a:
                    continue
                cand = tr.move_score(i, b)
                if cand > current + 1e-10 * max(1.0, abs(current)):
                    tr.apply(i, b)
                    current = cand
                    improved = True
                    if trace is not None:
                        trace.append(current)
                    break
        if not improved:
            break
    else:
        log.warning("static local search hit max_sweeps=%d", max_sweeps)
    if directed is None:
        directed = not np.array_equal(W, np.asarray(W).T)
    return tr.labels, estimate_theta_ml(W, tr.labels, k, directed=directed)


def fit_static_snapshot(W, k, seed=0, active=None, directed=True):
    """Spectral start then local search on one snapshot."""
    init = spectral_init(W, k, seed=seed, active=active)
    return static_local_search(W, k, init, seed=seed, directed=directed)
