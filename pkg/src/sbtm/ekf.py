"""Extended Kalman filter with an entrywise logistic observation map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

LOG_2PI = np.log(2.0 * np.pi)
NOISE_FLOOR = 1e-10


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance does not match mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Observation:
    """Observed block means with per-entry noise variance.

    ``mask`` is True for entries to skip (empty cells).
    """

    y: np.ndarray
    noise_var: np.ndarray
    mask: np.ndarray

    @property
    def observed(self) -> np.ndarray:
        return ~self.mask


def ekf_predict(belief: GaussianBelief, F, Gamma) -> GaussianBelief:
    F = np.asarray(F, dtype=float)
    return GaussianBelief(F @ belief.mean, F @ belief.cov @ F.T + np.asarray(Gamma))


def _cholesky(S, max_tries=6):
    jitter = 0.0
    scale = max(np.mean(np.diag(S)), 1e-300)
    for _ in range(max_tries):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(S.shape[0]))
        except np.linalg.LinAlgError:
            jitter = scale * 1e-12 if jitter == 0.0 else jitter * 100
    raise NumericalFailure("innovation covariance is not positive definite")


def _innovation(belief: GaussianBelief, obs: Observation, at=None):
    """Innovation pieces with the logistic map linearised at ``at`` (default:
    the belief mean). ``nu`` is the residual of the linearised model
    evaluated at the belief mean."""
    idx = np.flatnonzero(obs.observed)
    x = belief.mean if at is None else at
    pred = expit(x)
    slope = pred * (1.0 - pred)
    nu = obs.y[idx] - pred[idx] - slope[idx] * (belief.mean[idx] - x[idx])
    Hs = slope[idx]
    R = np.maximum(obs.noise_var[idx], NOISE_FLOOR)
    S = Hs[:, None] * belief.cov[np.ix_(idx, idx)] * Hs[None, :] + np.diag(R)
    return idx, Hs, nu, R, S


def innovation_loglik(belief: GaussianBelief, obs: Observation) -> float:
    """Gaussian log-density of the innovation under ``N(0, S)``; the filter
    state is left untouched."""
    idx, _, nu, _, S = _innovation(belief, obs)
    if idx.size == 0:
        return 0.0
    L = _cholesky(S)
    z = solve_triangular(L, nu, lower=True)
    return float(-0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * idx.size * LOG_2PI)


def _map_objective(x, belief: GaussianBelief, obs: Observation, P_chol):
    """Negative log posterior (up to a constant) of the logistic-link model
    with the noise variances held fixed."""
    idx = np.flatnonzero(obs.observed)
    r = obs.y[idx] - expit(x[idx])
    R = np.maximum(obs.noise_var[idx], NOISE_FLOOR)
    z = solve_triangular(P_chol, x - belief.mean, lower=True)
    return 0.5 * float(np.sum(r * r / R) + z @ z)


def ekf_update(belief: GaussianBelief, obs: Observation, iterations=1, tol=1e-10,
               max_halvings=30):
    """Linearise ``h = logistic`` at the predicted mean and apply a Joseph-form
    update. Returns the posterior belief and the innovation log-likelihood.

    ``iterations > 1`` re-linearises at the updated mean (iterated EKF, i.e.
    Gauss-Newton on the posterior mode). Each re-linearised step is
    backtracked until the posterior objective decreases, so the iteration
    cannot oscillate when the link is strongly curved between the prior mean
    and the mode. The log-likelihood always refers to the first linearisation.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    d = belief.dim
    P = belief.cov
    ll = None
    at = belief.mean
    P_chol = None
    for it in range(iterations):
        idx, Hs, nu, R, S = _innovation(belief, obs, at)
        if idx.size == 0:
            return belief, 0.0
        H = np.zeros((idx.size, d))
        H[np.arange(idx.size), idx] = Hs
        L = _cholesky(S)
        if ll is None:
            z = solve_triangular(L, nu, lower=True)
            ll = float(-0.5 * (z @ z) - np.log(np.diag(L)).sum() - 0.5 * idx.size * LOG_2PI)
        # K = P H^T S^{-1}
        K = solve_triangular(
            L, solve_triangular(L, (P @ H.T).T, lower=True), lower=True, trans="T"
        ).T
        mean = belief.mean + K @ nu
        if it > 0:
            if P_chol is None:
                P_chol = _cholesky(P)
            f_at = _map_objective(at, belief, obs, P_chol)
            direction = mean - at
            alpha = 1.0
            for _ in range(max_halvings):
                if _map_objective(at + alpha * direction, belief, obs, P_chol) <= f_at:
                    break
                alpha *= 0.5
            else:
                alpha = 0.0
            mean = at + alpha * direction
            if alpha < 1.0:
                # gain and Jacobian of the accepted point
                idx, Hs, nu, R, S = _innovation(belief, obs, mean)
                H = np.zeros((idx.size, d))
                H[np.arange(idx.size), idx] = Hs
                L = _cholesky(S)
                K = solve_triangular(
                    L, solve_triangular(L, (P @ H.T).T, lower=True), lower=True, trans="T"
                ).T
        step = np.max(np.abs(mean - at))
        at = mean
        if step < tol:
            break
    A = np.eye(d) - K @ H
    cov = A @ P @ A.T + (K * R) @ K.T
    return GaussianBelief(mean, cov), ll


def rts_smooth(filtered, predicted, F):
    """Rauch-Tung-Striebel pass over filtered beliefs.

    ``predicted[t]`` is the one-step prediction for step ``t`` and
    ``filtered[t]`` its update. Returns smoothed beliefs and lag-one
    cross-covariances ``Cov(x_t, x_{t-1})`` (entry 0 is None).
    """
    F = np.asarray(F, dtype=float)
    n = len(filtered)
    means = [None] * n
    covs = [None] * n
    cross = [None] * n
    means[-1] = filtered[-1].mean
    covs[-1] = filtered[-1].cov
    for t in range(n - 2, -1, -1):
        Pf = filtered[t].cov
        Pp = predicted[t + 1].cov
        J = np.linalg.solve(Pp.T, (Pf @ F.T).T).T
        means[t] = filtered[t].mean + J @ (means[t + 1] - predicted[t + 1].mean)
        covs[t] = Pf + J @ (covs[t + 1] - Pp) @ J.T
        cross[t + 1] = covs[t + 1] @ J.T
    return [GaussianBelief(m, c) for m, c in zip(means, covs)], cross
