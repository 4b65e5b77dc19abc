"""A-posteriori inference for the SBTM and its baselines.

The dynamic fitters follow the same loop: spectral start and likelihood
hill climbing on the first snapshot, then at each later step a single-node
hill climb over class assignments, an EKF update at the winning assignment
and a prediction for the next step.

The default hill-climb score (``"posterior"``) is the Bernoulli edge
log-likelihood of the candidate assignment plus the Gaussian log-prior,
both evaluated at the EKF-updated state; the scaling factors are recomputed
at that state. ``"innovation"`` scores by the one-step predictive density of
the block observations instead. The committed update relinearizes the
logistic link ``commit_iterations`` times (an iterated EKF), which removes
most of the first-step linearization bias.
"""

from __future__ import annotations

import json
import logging
import numbers
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logit, xlogy

from . import __version__
from .dyngraph import BlockCells, ClassSequence, DynamicNetwork, orient_pairs
from .ekf import (
    LOG_2PI,
    GaussianBelief,
    Observation,
    ekf_predict,
    ekf_update,
    innovation_loglik,
    rts_smooth,
)
from .sbm import estimate_theta_ml, fit_static_snapshot
from .transition import (
    BlockLayout,
    ScalingFactors,
    StateDynamics,
    TransitionMatrices,
    theta_step,
    xi_tables,
)

log = logging.getLogger(__name__)

XI_FLOOR = 1e-12
MODELS = ("sbtm", "hmsbm", "static")
SCORES = ("posterior", "innovation")


# ---------------------------------------------------------------------------
# observations


def observation_vector(W_t, cells: BlockCells, scaling: ScalingFactors, pi, layout: BlockLayout):
    """Scaled block means per cell, ordered as the state: all ``u=0`` cells,
    then all ``u=1`` cells. Noise variance is ``(s/n)^2`` evaluated at the
    plug-in ``pi``; empty cells are masked."""
    W_t = np.asarray(W_t)
    xi = np.maximum(scaling.for_cells(cells), XI_FLOOR)
    w = W_t[cells.src, cells.dst]
    ys, vs, ms = [], [], []
    for u, P in ((0, pi.pi0), (1, pi.pi1)):
        for a, b in zip(layout.rows, layout.cols):
            sel = (cells.u == u) & (cells.a == a + 1) & (cells.b == b + 1)
            n = int(sel.sum())
            if n == 0:
                ys.append(0.0)
                vs.append(1.0)
                ms.append(True)
                continue
            p = P[a, b]
            ys.append(np.sum(w[sel] / xi[sel]) / n)
            vs.append((p * np.sum(1.0 / xi[sel]) - n * p * p) / n**2)
            ms.append(False)
    return Observation(np.array(ys), np.array(vs), np.array(ms))


class _PairTable:
    """Counts of active pairs and of edges at ``t`` keyed by
    ``(u, a_prev, b_prev, a, b)``, updated incrementally for one-node moves."""

    def __init__(self, W_t, W_prev, labels_prev, labels, k, directed):
        self.Wt = np.asarray(W_t, dtype=np.int64)
        self.Wp = np.asarray(W_prev, dtype=np.int64)
        self.cp = np.asarray(labels_prev, dtype=np.int64)
        self.k = k
        self.directed = directed
        self.labels = np.asarray(labels, dtype=np.int64).copy()
        self.active = np.flatnonzero(self.labels > 0)
        self.size = 2 * (k + 1) ** 2 * k * k
        self.n, self.m = self._count_all()

    def _keys(self, ii, jj, ci, cj):
        u = self.Wp[ii, jj] * (self.cp[ii] > 0) * (self.cp[jj] > 0)
        a, b, ap, bp = orient_pairs(ci, cj, self.cp[ii], self.cp[jj], self.directed)
        K1, k = self.k + 1, self.k
        return (((u * K1 + ap) * K1 + bp) * k + (a - 1)) * k + (b - 1)

    def _count(self, keys, w):
        n = np.bincount(keys, minlength=self.size)
        m = np.bincount(keys, weights=w, minlength=self.size)
        return n, m

    def _count_all(self):
        idx = self.active
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        sel = ii != jj if self.directed else ii < jj
        ii, jj = ii[sel], jj[sel]
        keys = self._keys(ii, jj, self.labels[ii], self.labels[jj])
        return self._count(keys, self.Wt[ii, jj])

    def node_counts(self, i, ci):
        """Contribution of every pair touching node ``i`` if it had class ``ci``."""
        others = self.active[self.active != i]
        lab = self.labels[others]
        fixed = np.full(others.size, ci)
        iv = np.full(others.size, i)
        if self.directed:
            keys = np.concatenate(
                [self._keys(iv, others, fixed, lab), self._keys(others, iv, lab, fixed)]
            )
            w = np.concatenate([self.Wt[i, others], self.Wt[others, i]])
        else:
            keys = self._keys(iv, others, fixed, lab)
            w = self.Wt[i, others]
        return self._count(keys, w)

    def moved(self, i, new, old_counts=None):
        on, om = old_counts if old_counts is not None else self.node_counts(i, self.labels[i])
        nn, nm = self.node_counts(i, new)
        return self.n - on + nn, self.m - om + nm

    def apply(self, i, new, n, m):
        self.labels[i] = new
        self.n, self.m = n, m

    def shaped(self, arr):
        K1, k = self.k + 1, self.k
        return arr.reshape(2, K1, K1, k, k)


def _sbtm_obs_from_counts(n, m, xi, pi: TransitionMatrices, layout: BlockLayout):
    xi = np.maximum(xi, XI_FLOOR)
    ncell = n.sum(axis=(1, 2))
    sw = (m / xi).sum(axis=(1, 2))
    sinv = (n / xi).sum(axis=(1, 2))
    nv = np.concatenate([layout.to_vec(ncell[0]), layout.to_vec(ncell[1])])
    swv = np.concatenate([layout.to_vec(sw[0]), layout.to_vec(sw[1])])
    siv = np.concatenate([layout.to_vec(sinv[0]), layout.to_vec(sinv[1])])
    p = np.concatenate([layout.to_vec(pi.pi0), layout.to_vec(pi.pi1)])
    return _obs(nv, swv, p * siv - nv * p * p)


def _hm_obs_from_counts(n, m, theta, layout: BlockLayout):
    ncell = layout.to_vec(n.sum(axis=(0, 1, 2)))
    mcell = layout.to_vec(m.sum(axis=(0, 1, 2)))
    p = layout.to_vec(theta)
    return _obs(ncell, mcell, ncell * p * (1.0 - p))


def _obs(n, s, numer):
    mask = n <= 0
    safe = np.where(mask, 1.0, n)
    y = np.where(mask, 0.0, s / safe)
    var = np.where(mask, 1.0, numer / safe**2)
    return Observation(y, var, mask)


# ---------------------------------------------------------------------------
# step scorers


class _SbtmStep:
    """Scores class assignments at one step against the predicted belief.

    ``"posterior"`` scores the log joint density of ``W^t`` and the state at
    the EKF-updated mean (edge likelihood plus Gaussian prior term);
    ``"innovation"`` scores the Gaussian log-density of the innovation.
    """

    def __init__(self, W_t, W_prev, labels_prev, labels, k, layout, theta_prev, belief,
                 score="posterior"):
        self.layout = layout
        self.belief = belief
        self.mode = _check_score(score)
        self.pi = TransitionMatrices.from_state(belief.mean, layout)
        xi0, xi1 = xi_tables(theta_prev, self.pi.pi0, self.pi.pi1)
        self.xi = np.stack([xi0, xi1])
        self.theta_prev = np.asarray(theta_prev, dtype=float)
        self.theta_pred = theta_step(theta_prev, self.pi)
        self.table = _PairTable(W_t, W_prev, labels_prev, labels, k, layout.directed)
        self._chol = None

    def observation(self, n=None, m=None) -> Observation:
        tb = self.table
        n = tb.n if n is None else n
        m = tb.m if m is None else m
        return _sbtm_obs_from_counts(tb.shaped(n), tb.shaped(m), self.xi, self.pi, self.layout)

    def edge_loglik(self, n, m, mean) -> float:
        """Log-likelihood of ``W^t`` given ``W^{t-1}`` with the scaling factors
        recomputed at ``mean`` so that every ``xi * pi`` is a valid probability."""
        pi = TransitionMatrices.from_state(mean, self.layout)
        xi = np.stack(xi_tables(self.theta_prev, pi.pi0, pi.pi1))
        base = np.stack([pi.pi0, pi.pi1])[:, None, None]
        p = np.clip(xi * base, 1e-12, 1 - 1e-12)
        tb = self.table
        n, m = tb.shaped(n), tb.shaped(m)
        return float(np.sum(xlogy(m, p) + xlogy(n - m, 1 - p)))

    def log_prior(self, mean) -> float:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.belief.cov)
        L = self._chol
        z = solve_triangular(L, mean - self.belief.mean, lower=True)
        return float(-0.5 * z @ z - np.log(np.diag(L)).sum() - 0.5 * z.size * LOG_2PI)

    def score(self, n=None, m=None) -> float:
        tb = self.table
        n = tb.n if n is None else n
        m = tb.m if m is None else m
        obs = self.observation(n, m)
        if self.mode == "innovation":
            return innovation_loglik(self.belief, obs)
        post, _ = ekf_update(self.belief, obs)
        return self.edge_loglik(n, m, post.mean) + self.log_prior(post.mean)


class _HmStep(_SbtmStep):
    def __init__(self, W_t, W_prev, labels_prev, labels, k, layout, theta_prev, belief,
                 score="posterior"):
        self.layout = layout
        self.belief = belief
        self.mode = _check_score(score)
        self.theta_pred = layout.to_mat(expit(belief.mean))
        zeros = np.zeros_like(np.asarray(W_t))
        self.table = _PairTable(W_t, zeros, np.zeros_like(labels_prev), labels, k, layout.directed)
        self._chol = None

    def observation(self, n=None, m=None) -> Observation:
        tb = self.table
        n = tb.n if n is None else n
        m = tb.m if m is None else m
        return _hm_obs_from_counts(tb.shaped(n), tb.shaped(m), self.theta_pred, self.layout)

    def edge_loglik(self, n, m, mean) -> float:
        tb = self.table
        nb = self.layout.to_vec(tb.shaped(n).sum(axis=(0, 1, 2)))
        mb = self.layout.to_vec(tb.shaped(m).sum(axis=(0, 1, 2)))
        p = np.clip(expit(mean), 1e-12, 1 - 1e-12)
        return float(np.sum(xlogy(mb, p) + xlogy(nb - mb, 1 - p)))


def _check_score(score):
    if score not in SCORES:
        raise ValueError(f"unknown score {score!r}; choose from {SCORES}")
    return score


def score_assignment(
    candidate, W_t, W_prev, classes_prev, theta_prev, belief: GaussianBelief, layout: BlockLayout,
    score="posterior",
) -> float:
    """Score of a candidate class assignment at one step given the predicted
    belief; see :class:`_SbtmStep` for the two score modes."""
    return _SbtmStep(
        W_t, W_prev, classes_prev, candidate, layout.k, layout, theta_prev, belief, score
    ).score()


def _seed_new_nodes(labels, new_nodes, W_t, theta, directed, k):
    """Class maximising each new node's edge likelihood under ``theta``."""
    lt = np.log(np.clip(theta, 1e-12, 1))
    l1 = np.log(np.clip(1 - theta, 1e-12, 1))
    W = np.asarray(W_t)
    for i in new_nodes:
        known = np.flatnonzero(labels > 0)
        known = known[known != i]
        if known.size == 0:
            labels[i] = 1
            continue
        cj = labels[known] - 1
        best, best_ll = 1, -np.inf
        for a in range(k):
            w = W[i, known]
            ll = np.sum(w * lt[a, cj] + (1 - w) * l1[a, cj])
            if directed:
                w = W[known, i]
                ll += np.sum(w * lt[cj, a] + (1 - w) * l1[cj, a])
            if ll > best_ll:
                best, best_ll = a + 1, ll
        labels[i] = best
    return labels


def _hill_climb(step: _SbtmStep, k, rng, max_sweeps):
    """First-improvement single-node search; never empties a class."""
    tb = step.table
    current = step.score()
    trace = [current]
    sizes = np.bincount(tb.labels, minlength=k + 1)[1:]
    for _ in range(max_sweeps):
        improved = False
        for i in rng.permutation(tb.active):
            a = tb.labels[i]
            if sizes[a - 1] <= 1:
                continue
            old = tb.node_counts(i, a)
            for b in range(1, k + 1):
                if b == a:
                    continue
                n, m = tb.moved(i, b, old)
                cand = step.score(n, m)
                if cand > current + 1e-9 * max(1.0, abs(current)):
                    tb.apply(i, b, n, m)
                    sizes[a - 1] -= 1
                    sizes[b - 1] += 1
                    current = cand
                    trace.append(current)
                    improved = True
                    break
        if not improved:
            break
    else:
        log.warning("local search hit max_sweeps=%d", max_sweeps)
    return tb.labels.copy(), trace


# ---------------------------------------------------------------------------
# fit results


@dataclass
class FitResult:
    model: str
    k: int
    directed: bool
    labels: np.ndarray
    thetas: np.ndarray
    pi0: np.ndarray | None = None
    pi1: np.ndarray | None = None
    predicted: list = field(default_factory=list)
    filtered: list = field(default_factory=list)
    score_traces: list = field(default_factory=list)
    hyper: dict = field(default_factory=dict)
    seed: int | None = None
    wall_time: float = 0.0
    node_ids: tuple = ()

    @property
    def classes(self) -> ClassSequence:
        return ClassSequence(self.labels, self.k)

    @property
    def T(self) -> int:
        return self.labels.shape[0]

    def transition_matrices(self) -> list:
        """``[None, Pi^2, ..., Pi^T]`` for SBTM fits."""
        if self.pi0 is None:
            raise ValueError(f"{self.model} fit has no transition matrices")
        return [None] + [
            TransitionMatrices(self.pi0[t], self.pi1[t]) for t in range(1, self.T)
        ]

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        def belief(b):
            return {"mean": arr(b.mean), "cov": arr(b.cov)}

        return {
            "model": self.model,
            "k": self.k,
            "directed": self.directed,
            "T": self.T,
            "node_ids": [str(n) for n in self.node_ids],
            "labels": arr(self.labels),
            "thetas": arr(self.thetas),
            "pi0": arr(self.pi0),
            "pi1": arr(self.pi1),
            "predicted": [belief(b) for b in self.predicted],
            "filtered": [belief(b) for b in self.filtered],
            "score_traces": [list(map(float, tr)) for tr in self.score_traces],
            "hyper": self.hyper,
            "seed": self.seed,
            "wall_time": self.wall_time,
            "version": __version__,
        }

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        def arr(x):
            return None if x is None else np.asarray(x, dtype=float)

        def belief(b):
            return GaussianBelief(np.asarray(b["mean"]), np.asarray(b["cov"]))

        return cls(
            model=d["model"],
            k=int(d["k"]),
            directed=bool(d["directed"]),
            labels=np.asarray(d["labels"], dtype=np.int64),
            thetas=arr(d["thetas"]),
            pi0=arr(d.get("pi0")),
            pi1=arr(d.get("pi1")),
            predicted=[belief(b) for b in d.get("predicted", [])],
            filtered=[belief(b) for b in d.get("filtered", [])],
            score_traces=[list(tr) for tr in d.get("score_traces", [])],
            hyper=d.get("hyper", {}),
            seed=d.get("seed"),
            wall_time=d.get("wall_time", 0.0),
            node_ids=tuple(d.get("node_ids", ())),
        )

    @classmethod
    def from_json(cls, path: str) -> "FitResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# drivers


def default_dynamics(layout: BlockLayout, theta1, model="sbtm", gamma=0.01, gamma1=0.25, F=None):
    """Random-walk dynamics with the prior mean at ``logit(theta1)`` for every
    state block."""
    base = logit(layout.to_vec(np.asarray(theta1, dtype=float)))
    mu = np.concatenate([base, base]) if model == "sbtm" else base
    d = mu.size
    G = np.asarray(gamma, dtype=float)
    G = G * np.eye(d) if G.ndim == 0 else np.diag(G) if G.ndim == 1 else G
    G1 = np.asarray(gamma1, dtype=float)
    G1 = G1 * np.eye(d) if G1.ndim == 0 else np.diag(G1) if G1.ndim == 1 else G1
    return StateDynamics(np.eye(d) if F is None else np.asarray(F, float), G, mu, G1)


def _id_ordered(net: DynamicNetwork):
    """Copy of ``net`` with nodes sorted by id, plus the index that restores
    the original order. Fitting in id order makes results independent of how
    the caller happened to order the nodes."""
    ids = net.node_ids

    def key(i):
        x = ids[i]
        return (0, x, "") if isinstance(x, numbers.Integral) else (1, 0, str(x))

    order = np.array(sorted(range(net.n_nodes), key=key), dtype=np.int64)
    if np.array_equal(order, np.arange(net.n_nodes)):
        return net, None
    reordered = DynamicNetwork(
        net.snapshots[:, order][:, :, order], tuple(ids[i] for i in order),
        net.activity[:, order], net.directed,
    )
    return reordered, np.argsort(order)


def _first_step(net: DynamicNetwork, k, seed):
    W1 = net.W(1)
    active = net.active(1)
    labels, theta1 = fit_static_snapshot(W1, k, seed=seed, active=active, directed=net.directed)
    return labels, theta1


def _dynamic_fit(net, k, model, hyper, seed, gamma, gamma1, max_sweeps, score, commit_iterations):
    if net.T < 2:
        raise ValueError("dynamic fits need at least two snapshots")
    start = time.perf_counter()
    node_ids = net.node_ids
    net, restore = _id_ordered(net)
    rng = np.random.default_rng(seed)
    layout = BlockLayout(k, net.directed)
    labels, theta = _first_step(net, k, seed)
    if hyper is None:
        hyper = default_dynamics(layout, theta, model, gamma, gamma1)
    else:
        # the prior mean always comes from the first snapshot's ML estimate
        hyper = StateDynamics(
            hyper.F, hyper.Gamma, default_dynamics(layout, theta, model).mu1, hyper.Gamma1
        )
    expected = 2 * layout.n_blocks if model == "sbtm" else layout.n_blocks
    if hyper.dim != expected:
        raise ValueError(f"{model} state dimension must be {expected}, got {hyper.dim}")

    all_labels = [labels]
    thetas = [theta]
    pi0s = [np.full((k, k), np.nan)]
    pi1s = [np.full((k, k), np.nan)]
    predicted, filtered, traces = [], [], [[]]
    belief = GaussianBelief(hyper.mu1, hyper.Gamma1)
    Step = _SbtmStep if model == "sbtm" else _HmStep

    for t in range(2, net.T + 1):
        active = net.active(t)
        prev = all_labels[-1]
        init = np.where(active, prev, 0)
        new_nodes = np.flatnonzero(active & (prev == 0))
        step = Step(net.W(t), net.W(t - 1), prev, init, k, layout, theta, belief, score)
        if new_nodes.size:
            init = _seed_new_nodes(init, new_nodes, net.W(t), step.theta_pred, net.directed, k)
            step = Step(net.W(t), net.W(t - 1), prev, init, k, layout, theta, belief, score)
        empty = np.flatnonzero(np.bincount(init, minlength=k + 1)[1:] == 0)
        if empty.size:
            warnings.warn(f"t={t}: classes {empty + 1} are empty; their cells are masked")
        lab, trace = _hill_climb(step, k, rng, max_sweeps)
        post, _ = ekf_update(belief, step.observation(), iterations=commit_iterations)
        predicted.append(belief)
        filtered.append(post)
        if model == "sbtm":
            pi = TransitionMatrices.from_state(post.mean, layout)
            theta = theta_step(theta, pi)
            pi0s.append(pi.pi0)
            pi1s.append(pi.pi1)
        else:
            theta = layout.to_mat(expit(post.mean))
        thetas.append(theta)
        all_labels.append(lab)
        traces.append(trace)
        belief = ekf_predict(post, hyper.F, hyper.Gamma)

    labels = np.stack(all_labels)
    return FitResult(
        model=model,
        k=k,
        directed=net.directed,
        labels=labels if restore is None else labels[:, restore],
        thetas=np.stack(thetas),
        pi0=np.stack(pi0s) if model == "sbtm" else None,
        pi1=np.stack(pi1s) if model == "sbtm" else None,
        predicted=predicted,
        filtered=filtered,
        score_traces=traces,
        hyper={
            "F": hyper.F.tolist(),
            "Gamma": hyper.Gamma.tolist(),
            "mu1": hyper.mu1.tolist(),
            "Gamma1": hyper.Gamma1.tolist(),
            "max_sweeps": max_sweeps,
            "score": score,
            "commit_iterations": commit_iterations,
        },
        seed=seed,
        wall_time=time.perf_counter() - start,
        node_ids=node_ids,
    )


def fit_sbtm(net: DynamicNetwork, k, hyper: StateDynamics | None = None, seed=0,
             gamma=0.01, gamma1=0.25, max_sweeps=50, score="posterior",
             commit_iterations=10) -> FitResult:
    """Filter the SBTM state and estimate classes step by step.

    Only ``F``, ``Gamma`` and ``Gamma1`` are taken from ``hyper``; the prior
    mean is ``logit`` of the first snapshot's smoothed ML block matrix.
    Candidate assignments are scored with a single linearisation; the update
    committed at the winning assignment re-linearises up to
    ``commit_iterations`` times.
    """
    return _dynamic_fit(net, k, "sbtm", hyper, seed, gamma, gamma1, max_sweeps, score,
                        commit_iterations)


def fit_hmsbm(net: DynamicNetwork, k, hyper: StateDynamics | None = None, seed=0,
              gamma=0.01, gamma1=0.25, max_sweeps=50, score="posterior",
              commit_iterations=10) -> FitResult:
    """Hidden-Markov baseline: the state is ``logit(Theta^t)`` and the
    observations are raw block densities."""
    return _dynamic_fit(net, k, "hmsbm", hyper, seed, gamma, gamma1, max_sweeps, score,
                        commit_iterations)


def fit_static(net: DynamicNetwork, k, seed=0) -> FitResult:
    """Independent spectral start plus likelihood local search per snapshot."""
    start = time.perf_counter()
    node_ids = net.node_ids
    net, restore = _id_ordered(net)
    labels, thetas = [], []
    for t in range(1, net.T + 1):
        lab, th = fit_static_snapshot(
            net.W(t), k, seed=seed, active=net.active(t), directed=net.directed
        )
        labels.append(lab)
        thetas.append(th)
    labels = np.stack(labels)
    return FitResult(
        model="static", k=k, directed=net.directed,
        labels=labels if restore is None else labels[:, restore],
        thetas=np.stack(thetas), seed=seed, wall_time=time.perf_counter() - start,
        node_ids=node_ids,
    )


def fit(net: DynamicNetwork, k, model="sbtm", **kwargs) -> FitResult:
    if model == "sbtm":
        return fit_sbtm(net, k, **kwargs)
    if model == "hmsbm":
        return fit_hmsbm(net, k, **kwargs)
    if model == "static":
        return fit_static(net, k, seed=kwargs.get("seed", 0))
    raise ValueError(f"unknown model {model!r}; choose from {MODELS}")


# ---------------------------------------------------------------------------
# hyperparameters


def _gamma_from_smoother(res: FitResult, F):
    sm, cross = rts_smooth(res.filtered, res.predicted, F)
    acc = np.zeros(sm[0].dim)
    for t in range(1, len(sm)):
        diff = sm[t].mean - F @ sm[t - 1].mean
        # E[(x_t - F x_{t-1})^2] from smoothed moments
        ev = (
            np.outer(diff, diff)
            + sm[t].cov
            + F @ sm[t - 1].cov @ F.T
            - cross[t] @ F.T
            - F @ cross[t].T
        )
        acc += np.diag(ev)
    return acc / (len(sm) - 1), sm


def estimate_hyperparameters(
    net: DynamicNetwork, k, init: StateDynamics | None = None, model="sbtm", seed=0,
    max_iter=10, tol=1e-2, estimate_gamma1=False, floor=1e-6,
) -> StateDynamics:
    """Alternate fitting with re-estimating a diagonal process covariance from
    RTS-smoothed state increments; ``F`` stays fixed.

    Returns the iterate with the highest total innovation log-likelihood if
    the relative change never drops below ``tol``.
    """
    if net.T < 3:
        raise ValueError("hyperparameter estimation needs T >= 3")
    hyper = init
    best, best_ll = None, -np.inf
    fitter = fit_sbtm if model == "sbtm" else fit_hmsbm
    for it in range(max_iter):
        res = fitter(net, k, hyper, seed=seed)
        F = np.asarray(res.hyper["F"])
        used = StateDynamics(
            F, np.asarray(res.hyper["Gamma"]), np.asarray(res.hyper["mu1"]),
            np.asarray(res.hyper["Gamma1"]),
        )
        ll = float(sum(tr[-1] for tr in res.score_traces if tr))
        if ll > best_ll:
            best, best_ll = used, ll
        g, sm = _gamma_from_smoother(res, F)
        g = np.maximum(g, floor)
        G1 = used.Gamma1
        if estimate_gamma1:
            dev = sm[0].mean - used.mu1
            G1 = np.diag(np.maximum(np.diag(sm[0].cov) + dev**2, floor))
        new = StateDynamics(F, np.diag(g), used.mu1, G1)
        old = np.diag(used.Gamma)
        change = np.max(np.abs(g - old) / old)
        log.info("hyper iteration %d: mean gamma %.4g, change %.3g", it, g.mean(), change)
        hyper = new
        if change < tol:
            return new
    warnings.warn("hyperparameter estimation did not converge; returning best iterate")
    return best
