"""Stochastic block transition model: scaling factors, marginal recursion,
logit-space state dynamics and simulation.

Class indices in scaling tables follow the labelling convention of
:class:`~sbtm.dyngraph.ClassSequence`: previous classes run over 0..k (0 for
a node absent at ``t-1``) and current classes over 1..k, stored at offset
``a - 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .dyngraph import BlockCells, ClassSequence, DynamicNetwork
from .sbm import sample_sbm

log = logging.getLogger(__name__)

PI_FLOOR = 1e-12
PSI_CAP = 12.0


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockLayout:
    """Mapping between ``k x k`` block matrices and state-vector entries.

    Directed layouts stack all blocks column-major. Undirected layouts keep
    only ``a <= b``, still column-major, and rebuild symmetric matrices.
    """

    k: int
    directed: bool = True
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rows, cols = [], []
        for b in range(self.k):
            for a in range(self.k):
                if self.directed or a <= b:
                    rows.append(a)
                    cols.append(b)
        object.__setattr__(self, "rows", np.array(rows, dtype=np.int64))
        object.__setattr__(self, "cols", np.array(cols, dtype=np.int64))

    @property
    def n_blocks(self) -> int:
        return self.rows.size

    def index_matrix(self) -> np.ndarray:
        """``k x k`` map from block to vector position (symmetric if undirected)."""
        idx = np.full((self.k, self.k), -1, dtype=np.int64)
        idx[self.rows, self.cols] = np.arange(self.n_blocks)
        if not self.directed:
            idx[self.cols, self.rows] = np.arange(self.n_blocks)
        return idx

    def to_vec(self, M) -> np.ndarray:
        return np.asarray(M)[..., self.rows, self.cols]

    def to_mat(self, v) -> np.ndarray:
        v = np.asarray(v)
        return v[..., self.index_matrix()]


@dataclass(frozen=True)
class TransitionMatrices:
    """New-edge (``pi0``) and re-edge (``pi1``) probabilities per block."""

    pi0: np.ndarray
    pi1: np.ndarray

    def __post_init__(self):
        for m in (self.pi0, self.pi1):
            if np.any((np.asarray(m) < 0) | (np.asarray(m) > 1)):
                raise ValueError("transition probabilities must lie in [0, 1]")

    @classmethod
    def from_state(cls, psi, layout: BlockLayout) -> "TransitionMatrices":
        psi = np.clip(np.asarray(psi, dtype=float), -PSI_CAP, PSI_CAP)
        nb = layout.n_blocks
        return cls(expit(layout.to_mat(psi[:nb])), expit(layout.to_mat(psi[nb:])))

    def to_state(self, layout: BlockLayout) -> np.ndarray:
        return np.concatenate(
            [logit(layout.to_vec(self.pi0)), logit(layout.to_vec(self.pi1))]
        )


@dataclass(frozen=True)
class StateDynamics:
    """Linear-Gaussian dynamics ``psi^t = F psi^{t-1} + v``, ``v ~ N(0, Gamma)``."""

    F: np.ndarray
    Gamma: np.ndarray
    mu1: np.ndarray
    Gamma1: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.mu1).size
        for name in ("F", "Gamma", "Gamma1"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}, got {M.shape}")
        for name in ("Gamma", "Gamma1"):
            M = np.asarray(getattr(self, name), dtype=float)
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")

    @property
    def dim(self) -> int:
        return np.asarray(self.mu1).size

    @classmethod
    def random_walk(cls, mu1, gamma_diag, gamma_off=0.0, gamma1=0.25):
        """Identity transition with ``Gamma = off * 1 1^T + (diag - off) I``."""
        mu1 = np.asarray(mu1, dtype=float)
        d = mu1.size
        Gamma = np.full((d, d), float(gamma_off)) + (gamma_diag - gamma_off) * np.eye(d)
        G1 = np.asarray(gamma1, dtype=float)
        G1 = G1 * np.eye(d) if G1.ndim == 0 else np.diag(G1) if G1.ndim == 1 else G1
        return cls(np.eye(d), Gamma, mu1, G1)


# ---------------------------------------------------------------------------
# marginal recursion and scaling factors


def theta_step(theta_prev, pi0, pi1=None):
    """Marginal block probabilities for class-stable pairs:
    ``theta^t = pi0 (1 - theta^{t-1}) + pi1 theta^{t-1}``.

    ``pi0`` may be a :class:`TransitionMatrices` in place of the two arrays.
    """
    if isinstance(pi0, TransitionMatrices):
        pi0, pi1 = pi0.pi0, pi0.pi1
    theta_prev = np.asarray(theta_prev, dtype=float)
    return pi0 * (1.0 - theta_prev) + pi1 * theta_prev


def xi_tables(theta_prev, pi0, pi1):
    """Scaling factors for every (previous, current) class combination.

    Inputs have shape ``(..., k, k)``; outputs ``xi0, xi1`` have shape
    ``(..., k+1, k+1, k, k)`` indexed ``[a_prev, b_prev, a-1, b-1]``.
    Leading batch dimensions broadcast.
    """
    tp = np.asarray(theta_prev, dtype=float)
    p0 = np.maximum(np.asarray(pi0, dtype=float), PI_FLOOR)
    p1 = np.maximum(np.asarray(pi1, dtype=float), PI_FLOOR)
    tc = theta_step(tp, p0, p1)
    k = tc.shape[-1]
    batch = np.broadcast_shapes(tp.shape, p0.shape, p1.shape)[:-2]

    def bounds(t_old, t_new, p):
        denom = p * (1.0 - t_old)
        with np.errstate(divide="ignore", invalid="ignore"):
            lo = np.maximum(0.0, (t_new - t_old) / denom)
            hi = np.minimum(1.0 / p, t_new / denom)
        # theta_old == 1 leaves only the re-edge term; no new-edge mass needed
        lo = np.where(denom > 0, lo, 0.0)
        hi = np.where(denom > 0, hi, 1.0 / p)
        return lo, hi

    a_self, b_self = bounds(tp, tc, p0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = (b_self - a_self) / (1.0 - a_self)
    gamma = np.where(np.isfinite(gamma), np.maximum(gamma, 1.0), 1.0)

    T_old = tp[..., :, :, None, None]
    T_new = tc[..., None, None, :, :]
    P0 = p0[..., None, None, :, :]
    P1 = p1[..., None, None, :, :]
    G = gamma[..., None, None, :, :]
    lo, hi = bounds(T_old, T_new, P0)
    x0 = lo + (hi - lo) / G
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = (T_new - x0 * P0 * (1.0 - T_old)) / (P1 * T_old)
    x1 = np.where(T_old > 0, x1, 1.0)
    x0 = np.clip(x0, 0.0, 1.0 / P0)
    x1 = np.clip(x1, 0.0, 1.0 / P1)

    shape = batch + (k + 1, k + 1, k, k)
    xi0 = np.empty(shape)
    xi1 = np.empty(shape)
    xi0[..., 1:, 1:, :, :] = x0
    xi1[..., 1:, 1:, :, :] = x1
    new0 = np.broadcast_to((tc / p0)[..., None, :, :], batch + (k + 1, k, k))
    xi0[..., 0, :, :, :] = new0
    xi0[..., :, 0, :, :] = new0
    xi1[..., 0, :, :, :] = 1.0
    xi1[..., :, 0, :, :] = 1.0
    r = np.arange(k)
    ii, jj = np.meshgrid(r, r, indexing="ij")
    xi0[..., ii + 1, jj + 1, ii, jj] = 1.0
    xi1[..., ii + 1, jj + 1, ii, jj] = 1.0
    return xi0, xi1


def scaling_pair(a_prev, b_prev, a, b, theta_prev, theta_cur, pi: TransitionMatrices):
    """``(xi0, xi1)`` for a pair moving from classes ``(a_prev, b_prev)`` to
    ``(a, b)``. ``theta_cur`` must equal ``theta_step(theta_prev, pi)``."""
    expected = theta_step(theta_prev, pi)
    if not np.allclose(theta_cur, expected, rtol=0, atol=1e-9):
        raise ValueError("theta_cur is not the recursion of theta_prev under pi")
    xi0, xi1 = xi_tables(theta_prev, pi.pi0, pi.pi1)
    return float(xi0[a_prev, b_prev, a - 1, b - 1]), float(xi1[a_prev, b_prev, a - 1, b - 1])


@dataclass(frozen=True)
class ScalingFactors:
    """Scaling factors keyed by ``(a_prev, b_prev, a, b)``.

    ``present`` flags combinations that occur among the pairs they were built
    for.
    """

    xi0: np.ndarray
    xi1: np.ndarray
    theta_cur: np.ndarray
    present: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.xi0.shape[-1]

    def for_pairs(self, a_prev, b_prev, a, b, u):
        """Per-pair scaling factor for the pair's previous edge state ``u``."""
        x0 = self.xi0[a_prev, b_prev, a - 1, b - 1]
        x1 = self.xi1[a_prev, b_prev, a - 1, b - 1]
        return np.where(np.asarray(u) == 1, x1, x0)

    def for_cells(self, cells: BlockCells) -> np.ndarray:
        return self.for_pairs(cells.a_prev, cells.b_prev, cells.a, cells.b, cells.u)


def scaling_matrix(cells: BlockCells, theta_prev, pi: TransitionMatrices) -> ScalingFactors:
    """Plug-in scaling factors for the combinations present in ``cells``."""
    xi0, xi1 = xi_tables(theta_prev, pi.pi0, pi.pi1)
    k = cells.k
    present = np.zeros((k + 1, k + 1, k, k), dtype=bool)
    present[cells.a_prev, cells.b_prev, cells.a - 1, cells.b - 1] = True
    return ScalingFactors(xi0, xi1, theta_step(theta_prev, pi), present)


def pair_probabilities(W_prev, classes_prev, classes_cur, pi: TransitionMatrices, scaling):
    """``Pr(w_ij^t = 1 | w_ij^{t-1})`` for every ordered pair; 0 for pairs with
    an inactive endpoint or on the diagonal."""
    cp = np.asarray(classes_prev)
    c = np.asarray(classes_cur)
    N = c.size
    act = np.flatnonzero(c > 0)
    sub = np.ix_(act, act)
    u = np.asarray(W_prev)[sub].astype(np.int64)
    # an endpoint absent at t-1 has no previous edge
    u = u * (cp[act][:, None] > 0) * (cp[act][None, :] > 0)
    ap = np.broadcast_to(cp[act][:, None], u.shape)
    bp = np.broadcast_to(cp[act][None, :], u.shape)
    a = np.broadcast_to(c[act][:, None], u.shape)
    b = np.broadcast_to(c[act][None, :], u.shape)
    xi = scaling.for_pairs(ap, bp, a, b, u)
    base = np.where(u == 1, pi.pi1[a - 1, b - 1], pi.pi0[a - 1, b - 1])
    P = np.zeros((N, N))
    P[sub] = xi * base
    np.fill_diagonal(P, 0.0)
    return P


def sample_transition(
    W_prev, classes_prev, classes_cur, pi: TransitionMatrices, scaling, seed=None,
    directed=True,
) -> np.ndarray:
    """Draw ``W^t`` given ``W^{t-1}``: each active pair is Bernoulli with
    probability ``xi * pi^{t|u}``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    P = pair_probabilities(W_prev, classes_prev, classes_cur, pi, scaling)
    if np.any(P < -1e-12) or np.any(P > 1 + 1e-9):
        raise InvariantViolation("scaled transition probability outside [0, 1]")
    W = (rng.random(P.shape) < P).astype(np.int8)
    if not directed:
        W = np.triu(W, 1)
        W = W + W.T
    return W


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class SimulationConfig:
    nodes: int = 128
    k: int = 4
    T: int = 10
    theta1: np.ndarray | None = None
    dynamics: StateDynamics | None = None
    churn: float = 0.1
    directed: bool = False
    class_sizes: tuple | None = None
    seed: int = 0


@dataclass
class Simulation:
    network: DynamicNetwork
    classes: ClassSequence
    states: np.ndarray
    thetas: np.ndarray
    scaling: list
    layout: BlockLayout


def block_matrix(k, diag, off) -> np.ndarray:
    return np.full((k, k), float(off)) + (float(diag) - float(off)) * np.eye(k)


def benchmark_config(seed=0, **overrides) -> SimulationConfig:
    """Four balanced classes of 32 nodes, ten undirected steps, 10% churn.

    ``k`` and ``directed`` overrides rebuild the block matrices and dynamics
    with the same diagonal/off-diagonal values.
    """
    k = overrides.pop("k", 4)
    directed = overrides.pop("directed", False)
    layout = BlockLayout(k, directed)
    pi0 = block_matrix(k, 0.1, 0.05)
    pi1 = block_matrix(k, 0.7, 0.45)
    mu1 = TransitionMatrices(pi0, pi1).to_state(layout)
    dyn = StateDynamics.random_walk(mu1, gamma_diag=0.01, gamma_off=0.0025, gamma1=0.04)
    cfg = dict(
        nodes=128, k=k, T=10, theta1=block_matrix(k, 0.2580, 0.0834),
        dynamics=dyn, churn=0.1, directed=directed, seed=seed,
    )
    cfg.update(overrides)
    return SimulationConfig(**cfg)


def churn_classes(labels, k, rate, rng) -> np.ndarray:
    """Move ``round(rate * n_active)`` distinct active nodes to a uniformly
    chosen different class."""
    labels = labels.copy()
    act = np.flatnonzero(labels > 0)
    n_move = int(round(rate * act.size))
    if n_move == 0 or k < 2:
        return labels
    movers = rng.choice(act, size=n_move, replace=False)
    shift = rng.integers(1, k, size=n_move)
    labels[movers] = (labels[movers] - 1 + shift) % k + 1
    return labels


def _psd_factor(C) -> np.ndarray:
    """``L`` with ``L @ L.T == C`` for a positive semidefinite ``C`` (zero allowed)."""
    vals, vecs = np.linalg.eigh(np.asarray(C, dtype=float))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate(config: SimulationConfig) -> Simulation:
    """Generate a dynamic network, its class sequence and state trajectory.

    ``W^1`` is a static SBM draw at ``theta1``; later snapshots use
    :func:`sample_transition` with the class-level marginal tracked by
    :func:`theta_step`.
    """
    rng = np.random.default_rng(config.seed)
    k, N, T = config.k, config.nodes, config.T
    layout = BlockLayout(k, config.directed)
    dyn = config.dynamics
    if dyn is None or dyn.dim != 2 * layout.n_blocks:
        raise ValueError(f"dynamics must have dimension {2 * layout.n_blocks}")
    if not 0.0 <= config.churn <= 1.0:
        raise ValueError("churn must lie in [0, 1]")
    theta = np.asarray(config.theta1, dtype=float)
    if theta.shape != (k, k):
        raise ValueError("theta1 must be k x k")

    if config.class_sizes is not None:
        sizes = np.asarray(config.class_sizes, dtype=np.int64)
    else:
        sizes = np.full(k, N // k)
        sizes[: N % k] += 1
    if sizes.sum() != N or sizes.size != k:
        raise ValueError("class sizes must sum to the node count")
    labels = np.repeat(np.arange(1, k + 1), sizes)

    L1 = _psd_factor(dyn.Gamma1)
    L = _psd_factor(dyn.Gamma)
    psi = dyn.mu1 + L1 @ rng.standard_normal(dyn.dim)
    psi = np.clip(psi, -PSI_CAP, PSI_CAP)
    states = [psi]
    thetas = [theta]
    all_labels = [labels]
    scalings = [None]
    W = sample_sbm(labels, theta, rng, directed=config.directed)
    snaps = [W]
    for _ in range(2, T + 1):
        psi = dyn.F @ psi + L @ rng.standard_normal(dyn.dim)
        psi = np.clip(psi, -PSI_CAP, PSI_CAP)
        pi = TransitionMatrices.from_state(psi, layout)
        new_labels = churn_classes(labels, k, config.churn, rng)
        xi0, xi1 = xi_tables(theta, pi.pi0, pi.pi1)
        sc = ScalingFactors(xi0, xi1, theta_step(theta, pi))
        W = sample_transition(W, labels, new_labels, pi, sc, rng, config.directed)
        theta = sc.theta_cur
        labels = new_labels
        states.append(psi)
        thetas.append(theta)
        all_labels.append(labels)
        scalings.append(sc)
        snaps.append(W)
    net = DynamicNetwork(
        np.stack(snaps), tuple(range(N)), np.ones((T, N), dtype=bool), config.directed
    )
    return Simulation(
        net, ClassSequence(np.stack(all_labels), k), np.stack(states), np.stack(thetas),
        scalings, layout,
    )


def resample_sbtm(classes: ClassSequence, theta1, pis, directed, seed=None) -> DynamicNetwork:
    """Draw a network from fitted SBTM parameters: ``W^1`` at ``theta1`` then
    transitions with ``pis[t]`` (``pis[0]`` unused). Nodes with class 0 are
    inactive."""
    rng = np.random.default_rng(seed)
    lab = classes.labels
    T = lab.shape[0]
    theta = np.asarray(theta1, dtype=float)
    W = sample_sbm(lab[0], theta, rng, directed=directed)
    snaps = [W]
    for t in range(1, T):
        pi = pis[t]
        xi0, xi1 = xi_tables(theta, pi.pi0, pi.pi1)
        sc = ScalingFactors(xi0, xi1, theta_step(theta, pi))
        W = sample_transition(W, lab[t - 1], lab[t], pi, sc, rng, directed)
        theta = sc.theta_cur
        snaps.append(W)
    return DynamicNetwork(
        np.stack(snaps), tuple(range(lab.shape[1])), lab > 0, directed
    )


def resample_hmsbm(classes: ClassSequence, thetas, directed, seed=None) -> DynamicNetwork:
    """Independent static SBM draw at every step."""
    rng = np.random.default_rng(seed)
    lab = classes.labels
    snaps = [sample_sbm(lab[t], thetas[t], rng, directed=directed) for t in range(lab.shape[0])]
    return DynamicNetwork(np.stack(snaps), tuple(range(lab.shape[1])), lab > 0, directed)
