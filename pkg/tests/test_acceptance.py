"""Acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (collected again in
the terminal summary) and asserts the same condition.
"""

import itertools
import os
import time

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from sbtm import cli
from sbtm.dyngraph import ClassSequence, DynamicNetwork, block_cells, load_network
from sbtm.ekf import GaussianBelief, Observation, ekf_predict, ekf_update
from sbtm.inference import fit, observation_vector
from sbtm.metrics import (
    AriReport,
    adjusted_rand_index,
    ari_per_step,
    duration_report,
    multi_step_fraction,
)
from sbtm.sbm import sample_sbm
from sbtm.transition import (
    BlockLayout,
    ScalingFactors,
    SimulationConfig,
    StateDynamics,
    TransitionMatrices,
    block_matrix,
    churn_classes,
    pair_probabilities,
    resample_hmsbm,
    resample_sbtm,
    sample_transition,
    benchmark_config,
    simulate,
    xi_tables,
)


def marginal_recursion(theta_prev, pi0, pi1):
    """Static-SBM marginal after one transition, written out independently."""
    return pi0 * (1.0 - theta_prev) + pi1 * theta_prev


# ---------------------------------------------------------------------------
# 1. scaling-factor invariants under random parameters


def test_c1_scaling_fuzz(acceptance):
    rng = np.random.default_rng(20240601)
    k, draws, chunk, tol = 3, 100_000, 10_000, 1e-9
    start = time.perf_counter()
    worst_identity = worst_stable = 0.0
    prob_ok = True
    r = np.arange(k)
    for _ in range(draws // chunk):
        theta = rng.uniform(0, 1, (chunk, k, k))
        # a share of draws sits exactly on the boundary values 0 and 1
        edge = rng.random((chunk, k, k)) < 0.05
        theta[edge] = rng.integers(0, 2, edge.sum())
        pi0 = rng.uniform(1e-4, 1, (chunk, k, k))
        pi1 = rng.uniform(1e-4, 1, (chunk, k, k))
        xi0, xi1 = xi_tables(theta, pi0, pi1)
        t_new = marginal_recursion(theta, pi0, pi1)

        P0 = pi0[:, None, None]
        P1 = pi1[:, None, None]
        prob_ok &= bool(np.all(xi0 * P0 >= -1e-15) and np.all(xi0 * P0 <= 1 + 1e-12))
        prob_ok &= bool(np.all(xi1 * P1 >= -1e-15) and np.all(xi1 * P1 <= 1 + 1e-12))

        stable0 = xi0[:, r[:, None] + 1, r[None, :] + 1, r[:, None], r[None, :]]
        stable1 = xi1[:, r[:, None] + 1, r[None, :] + 1, r[:, None], r[None, :]]
        worst_stable = max(worst_stable, np.abs(stable0 - 1).max(), np.abs(stable1 - 1).max())

        # previous classes both present: mix of new-edge and re-edge mass
        told = theta[:, :, :, None, None]
        mix = (xi0[:, 1:, 1:] * pi0[:, None, None] * (1 - told)
               + xi1[:, 1:, 1:] * pi1[:, None, None] * told)
        worst_identity = max(worst_identity, np.abs(mix - t_new[:, None, None]).max())
        # either endpoint new: only the new-edge branch is reachable
        new_a = xi0[:, 0, :] * pi0[:, None]
        new_b = xi0[:, :, 0] * pi0[:, None]
        worst_identity = max(
            worst_identity,
            np.abs(new_a - t_new[:, None]).max(),
            np.abs(new_b - t_new[:, None]).max(),
        )
    elapsed = time.perf_counter() - start
    ok = worst_identity <= tol and worst_stable <= tol and prob_ok and elapsed < 60
    acceptance(1, ok, f"draws={draws} max|identity err|={worst_identity:.2e} "
                      f"max|stable xi-1|={worst_stable:.2e} probs_in_[0,1]={prob_ok} "
                      f"time={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. asymptotic normality of the scaled block means


def test_c2_block_mean_normality(acceptance):
    rng = np.random.default_rng(7)
    k, N, reps, alpha = 2, 600, 1000, 0.01
    start = time.perf_counter()
    layout = BlockLayout(k, directed=False)
    pi = TransitionMatrices(block_matrix(k, 0.1, 0.05), block_matrix(k, 0.7, 0.45))
    theta1 = block_matrix(k, 0.25, 0.08)
    prev = np.repeat(np.arange(1, k + 1), N // k)
    cur = churn_classes(prev, k, 0.2, rng)
    W_prev = sample_sbm(prev, theta1, rng, directed=False)
    xi0, xi1 = xi_tables(theta1, pi.pi0, pi.pi1)
    scaling = ScalingFactors(xi0, xi1, marginal_recursion(theta1, pi.pi0, pi.pi1))

    net = DynamicNetwork(np.stack([W_prev, np.zeros_like(W_prev)]), tuple(range(N)),
                         np.ones((2, N), bool), directed=False)
    cells = block_cells(net, ClassSequence(np.stack([prev, cur]), k), 2)

    # state-ordered cells that are large and mix several previous class pairs
    chosen = []
    order = [(u, a, b) for u in (0, 1) for a, b in zip(layout.rows, layout.cols)]
    for pos, (u, a, b) in enumerate(order):
        sel = (cells.u == u) & (cells.a == a + 1) & (cells.b == b + 1)
        mixes = len(set(zip(cells.a_prev[sel].tolist(), cells.b_prev[sel].tolist())))
        if sel.sum() >= 10_000 and mixes > 1:
            chosen.append((pos, int(sel.sum()), mixes))
    assert chosen, "no block qualifies"

    ys = np.empty((reps, len(order)))
    var = None
    for rep in range(reps):
        W_t = sample_transition(W_prev, prev, cur, pi, scaling, rng, directed=False)
        obs = observation_vector(W_t, cells, scaling, pi, layout)
        ys[rep] = obs.y
        var = obs.noise_var
    truth = np.concatenate([layout.to_vec(pi.pi0), layout.to_vec(pi.pi1)])
    pvals = []
    for pos, _, _ in chosen:
        z = (ys[:, pos] - truth[pos]) / np.sqrt(var[pos])
        pvals.append(stats.kstest(z, "norm").pvalue)
    elapsed = time.perf_counter() - start
    ok = min(pvals) >= alpha and elapsed < 300
    sizes = ",".join(f"{n}" for _, n, _ in chosen)
    acceptance(2, ok, f"blocks={len(chosen)} (pairs {sizes}) "
                      f"min KS p={min(pvals):.3f} alpha={alpha} time={elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. exhaustive enumeration on a four-node instance


def test_c3_exhaustive_marginals(acceptance):
    k, N = 2, 4
    pairs = list(itertools.combinations(range(N), 2))
    # node 3 joins at t=2; node 1 moves from class 1 to class 2 at t=3
    classes = np.array([[1, 1, 2, 0], [1, 1, 2, 2], [1, 2, 2, 2]])
    theta1 = np.array([[0.3, 0.1], [0.1, 0.4]])
    pis = [
        TransitionMatrices(np.array([[0.12, 0.05], [0.05, 0.2]]),
                           np.array([[0.7, 0.35], [0.35, 0.8]])),
        TransitionMatrices(np.array([[0.2, 0.02], [0.02, 0.15]]),
                           np.array([[0.5, 0.6], [0.6, 0.9]])),
    ]

    configs = np.array(list(itertools.product([0, 1], repeat=len(pairs))))

    def matrix(bits):
        W = np.zeros((N, N), dtype=np.int8)
        for (i, j), w in zip(pairs, bits):
            W[i, j] = W[j, i] = w
        return W

    def config_probs(P):
        p = np.array([P[i, j] for i, j in pairs])
        return np.prod(np.where(configs == 1, p, 1 - p), axis=1)

    lab = classes[0]
    P1 = np.array([[theta1[lab[i] - 1, lab[j] - 1] if lab[i] and lab[j] else 0.0
                    for j in range(N)] for i in range(N)])
    p_first = config_probs(P1)
    kernels = []
    theta = theta1
    thetas = [theta1]
    for t, pi in enumerate(pis, start=1):
        xi0, xi1 = xi_tables(theta, pi.pi0, pi.pi1)
        sc = ScalingFactors(xi0, xi1, marginal_recursion(theta, pi.pi0, pi.pi1))
        K = np.array([config_probs(pair_probabilities(matrix(c), classes[t - 1], classes[t], pi, sc))
                      for c in configs])
        kernels.append(K)
        theta = marginal_recursion(theta, pi.pi0, pi.pi1)
        thetas.append(theta)

    joint = p_first[:, None, None] * kernels[0][:, :, None] * kernels[1][None, :, :]
    worst = 0.0
    for t in range(3):
        marg_cfg = joint.sum(axis=tuple(ax for ax in range(3) if ax != t))
        lab = classes[t]
        for p, (i, j) in enumerate(pairs):
            if not (lab[i] and lab[j]):
                continue
            got = float(marg_cfg @ configs[:, p])
            worst = max(worst, abs(got - thetas[t][lab[i] - 1, lab[j] - 1]))
    ok = worst <= 1e-12 and abs(joint.sum() - 1) <= 1e-12
    acceptance(3, ok, f"sequences={joint.size} max|marginal - recursion|={worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 4. three-way comparison on the four-class simulation


def test_c4_model_ordering(acceptance):
    runs, steps = 20, range(5, 11)
    start = time.perf_counter()
    per_model = {"sbtm": [], "hmsbm": [], "static": []}
    for run in range(runs):
        sim = simulate(benchmark_config(seed=1000 + run))
        for model in per_model:
            res = fit(sim.network, 4, model=model, seed=run)
            per_model[model].append(ari_per_step(sim.classes.labels, res.labels))
    elapsed = time.perf_counter() - start
    reports = {m: AriReport.from_runs(v, n_boot=1000, seed=0) for m, v in per_model.items()}
    s, h, st = reports["sbtm"], reports["hmsbm"], reports["static"]
    idx = [t - 1 for t in steps]
    ordered = all(s.mean[i] > h.mean[i] > st.mean[i] for i in idx)
    separated = sum(s.lo[i] > h.hi[i] and h.lo[i] > st.hi[i] for i in idx)
    for name, rep in reports.items():
        print(f"  {name:7s} " + " ".join(f"{rep.mean[i]:.3f}[{rep.lo[i]:.3f},{rep.hi[i]:.3f}]"
                                         for i in idx))
    ok = ordered and separated >= 4 and elapsed < 900
    acceptance(4, ok, f"ordering at t=5..10: {ordered}; separated steps {separated}/6; "
                      f"time={elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5. edge-duration fidelity of refitted models


def test_c5_duration_fidelity(acceptance):
    k = 3
    layout = BlockLayout(k, directed=False)
    pi0 = block_matrix(k, 0.03, 0.008)
    pi1 = block_matrix(k, 0.8, 0.6)
    dyn = StateDynamics.random_walk(TransitionMatrices(pi0, pi1).to_state(layout),
                                    gamma_diag=0.005, gamma_off=0.0, gamma1=0.01)
    cfg = SimulationConfig(nodes=240, k=k, T=10, theta1=pi0 / (1 - pi1 + pi0),
                           dynamics=dyn, churn=0.05, directed=False, seed=0)
    sim = simulate(cfg)
    true_pi1 = np.array([TransitionMatrices.from_state(x, layout).pi1 for x in sim.states])
    assert 0.4 <= true_pi1.min() and true_pi1.max() <= 0.9
    assert sim.thetas.max() < 0.2

    source = multi_step_fraction(duration_report(sim.network))
    rs = fit(sim.network, k, model="sbtm", seed=0)
    rh = fit(sim.network, k, model="hmsbm", seed=0)
    sbtm_nets = [resample_sbtm(rs.classes, rs.thetas[0], rs.transition_matrices(), False,
                               seed=100 + r) for r in range(10)]
    hm_nets = [resample_hmsbm(rh.classes, rh.thetas, False, seed=100 + r) for r in range(10)]
    f_sbtm = multi_step_fraction(duration_report(sbtm_nets))
    f_hm = multi_step_fraction(duration_report(hm_nets))
    ok = abs(f_sbtm - source) <= 0.10 and source - f_hm >= 0.15
    acceptance(5, ok, f"multi-step fraction source={source:.3f} sbtm={f_sbtm:.3f} "
                      f"hmsbm={f_hm:.3f}")
    assert ok


def test_c5_facebook_preset(tmp_path, acceptance):
    events = os.environ.get("SBTM_FACEBOOK_EVENTS")
    if not events:
        acceptance("5b", None, "facebook-prep shape check needs the event trace "
                               "in SBTM_FACEBOOK_EVENTS")
        pytest.skip("facebook trace not supplied")
    argv = ["ingest", "--events", events, "--preset", "facebook-prep", "--out", str(tmp_path)]
    activity = os.environ.get("SBTM_FACEBOOK_ACTIVITY")
    if activity:
        argv += ["--activity", activity]
    assert cli.main(argv) == 0
    net = load_network(tmp_path)
    ok = net.n_nodes == 462 and net.T == 9
    acceptance("5b", ok, f"facebook-prep nodes={net.n_nodes} steps={net.T}")
    assert ok


# ---------------------------------------------------------------------------
# 6. EKF arithmetic


def _obs(y, r, mask=None):
    y = np.atleast_1d(np.asarray(y, float))
    return Observation(y, np.broadcast_to(np.asarray(r, float), y.shape).copy(),
                       np.zeros(y.shape, bool) if mask is None else mask)


def test_c6_ekf(acceptance):
    errs = []
    # scalar
    m, P, y, R = 0.3, 0.5, 0.7, 0.02
    post, _ = ekf_update(GaussianBelief(np.array([m]), np.array([[P]])), _obs(y, R))
    s = expit(m)
    H = s * (1 - s)
    K = P * H / (H * H * P + R)
    errs += [abs(post.mean[0] - (m + K * (y - s))), abs(post.cov[0, 0] - (1 - K * H) * P)]
    # two states, correlated prior
    m2 = np.array([-1.0, 0.4])
    P2 = np.array([[0.3, 0.1], [0.1, 0.2]])
    y2, R2 = np.array([0.2, 0.65]), np.array([0.01, 0.03])
    post2, _ = ekf_update(GaussianBelief(m2, P2), _obs(y2, R2))
    s2 = expit(m2)
    H2 = np.diag(s2 * (1 - s2))
    K2 = P2 @ H2 @ np.linalg.inv(H2 @ P2 @ H2 + np.diag(R2))
    errs += [np.abs(post2.mean - (m2 + K2 @ (y2 - s2))).max(),
             np.abs(post2.cov - (np.eye(2) - K2 @ H2) @ P2).max()]
    closed_form = max(errs)

    rng = np.random.default_rng(3)
    d = 4
    b = GaussianBelief(np.zeros(d), np.eye(d))
    worst_eig = np.inf
    for _ in range(10_000):
        b = ekf_predict(b, np.eye(d), np.diag(rng.uniform(0, 0.05, d)))
        y = expit(b.mean + rng.normal(0, 1, d))
        b, _ = ekf_update(b, _obs(y, rng.uniform(1e-6, 0.1, d), rng.random(d) < 0.2))
        worst_eig = min(worst_eig, np.linalg.eigvalsh(b.cov).min())

    m3 = np.array([0.2, -1.3])
    b3 = GaussianBelief(m3, np.array([[0.4, 0.05], [0.05, 0.3]]))
    post3, _ = ekf_update(b3, _obs(expit(m3), [0.01, 0.02]))
    zero_shift = np.abs(post3.mean - m3).max()

    ok = closed_form <= 1e-12 and worst_eig >= 0 and zero_shift == 0
    acceptance(6, ok, f"closed-form err={closed_form:.1e} min eig over 1e4 cycles="
                      f"{worst_eig:.2e} zero-innovation shift={zero_shift:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 7. adjusted Rand index


def _ari_from_pairs(p, q):
    a = b = c = d = 0
    for i, j in itertools.combinations(range(len(p)), 2):
        sp, sq = p[i] == p[j], q[i] == q[j]
        a += sp and sq
        b += sp and not sq
        c += sq and not sp
        d += not sp and not sq
    expected = (a + b) * (a + c) / (a + b + c + d)
    maximum = ((a + b) + (a + c)) / 2
    if maximum == expected:
        return 1.0 if (a + b) == (a + c) else 0.0
    return (a - expected) / (maximum - expected)


def test_c7_ari(acceptance):
    rng = np.random.default_rng(11)
    identical = adjusted_rand_index([1, 1, 2, 3, 3, 2], [1, 1, 2, 3, 3, 2])
    singletons = adjusted_rand_index(np.arange(8), np.zeros(8))
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        p = rng.integers(0, int(rng.integers(1, 6)), n)
        q = rng.integers(0, int(rng.integers(1, 6)), n)
        worst = max(worst, abs(adjusted_rand_index(p, q) - _ari_from_pairs(p, q)))
    ok = identical == 1.0 and singletons == 0.0 and worst <= 1e-12
    acceptance(7, ok, f"identical={identical} singletons-vs-one={singletons} "
                      f"max|diff| over 100 pairs={worst:.1e}")
    assert ok
