"""Linear adversary: rewards restricted to nonnegative combinations of features.

After whitening under mu_ref the inner problem is

    min_theta  v . theta   s.t.  theta >= 0,  D . theta = r,  C . theta = 0,  |theta|^2 = 1

with v = E_pi[phi~], C = E_ref[phi~], D = E_ref[proxy * phi~]. For fixed duals
the minimiser is separable, theta_j = max(0, q_j / (2 lambda3)) with
q = v - lambda1 D - lambda2 C, and the duals solve the 3x3 stationarity
system, which we attack with a small Levenberg-Marquardt loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .adversary import CorrelationSpec, DualVariables
from .errors import DualNonConvergence, InvariantError, ShapeError, SpanError
from .mdp import OccupancyMeasure

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-10
LAMBDA3_CEIL = -1e-8


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray  # (S, A, k)
    names: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"feature values must have shape (S, A, k), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape[:2]

    def combine(self, theta) -> np.ndarray:
        return self.values @ np.asarray(theta, dtype=np.float64)


def center_features(features: FeatureMap, occ_ref: OccupancyMeasure) -> FeatureMap:
    """Subtract the mu_ref mean of every feature."""
    w = occ_ref.mass / occ_ref.mass.sum()
    mean = np.einsum("sa,sak->k", w, features.values)
    return FeatureMap(features.values - mean, features.names)


def compute_Q(occ_ref: OccupancyMeasure, features: FeatureMap) -> np.ndarray:
    """sum_{s,a} mu_ref(s,a) phi phi^T."""
    if features.shape != occ_ref.shape:
        raise ShapeError(f"feature shape {features.shape} does not match occupancy shape {occ_ref.shape}")
    q = np.einsum("sa,sak,sal->kl", occ_ref.mass, features.values, features.values)
    return 0.5 * (q + q.T)


def compute_Q_sampled(occ_pi_hat: OccupancyMeasure, ratio_ref_over_pi, features: FeatureMap) -> np.ndarray:
    """Importance-weighted Q from pi's empirical occupancy and mu_ref/mu_pi weights."""
    w = occ_pi_hat.mass * np.asarray(ratio_ref_over_pi, dtype=np.float64)
    return compute_Q(OccupancyMeasure(w, exact=False), features)


@dataclass(frozen=True)
class WhitenedFeatures:
    transform: np.ndarray  # W = Q^{-1/2}, symmetric
    values: np.ndarray  # (S, A, k) whitened features
    raw: FeatureMap | None = None

    @property
    def dim(self):
        return self.values.shape[2]

    def as_map(self) -> FeatureMap:
        return FeatureMap(self.values)


def whiten(Q, features: FeatureMap) -> WhitenedFeatures:
    """Symmetric inverse square root of Q applied to every feature vector."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (features.dim, features.dim):
        raise ShapeError(f"Q shape {Q.shape} does not match feature dimension {features.dim}")
    evals, evecs = np.linalg.eigh(0.5 * (Q + Q.T))
    low = evals <= EIG_FLOOR
    if low.any():
        dirs = [evecs[:, i].copy() for i in np.flatnonzero(low)]
        raise SpanError(
            f"reference-visited features do not span the feature space (eigenvalues {evals[low]})",
            dirs,
        )
    w = (evecs / np.sqrt(evals)) @ evecs.T
    w = 0.5 * (w + w.T)
    return WhitenedFeatures(w, features.values @ w.T, features)


@dataclass(frozen=True)
class LinearDualStats:
    c_phi: np.ndarray
    d_phi: np.ndarray
    v_phi: np.ndarray

    def q(self, lambda1, lambda2) -> np.ndarray:
        return self.v_phi - lambda1 * self.d_phi - lambda2 * self.c_phi


def linear_dual_stats(occ_pi: OccupancyMeasure, occ_ref: OccupancyMeasure, proxy_norm, whitened: WhitenedFeatures) -> LinearDualStats:
    phi = whitened.values
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    c = np.einsum("sa,sak->k", occ_ref.mass, phi)
    d = np.einsum("sa,sa,sak->k", occ_ref.mass, proxy_norm, phi)
    v = np.einsum("sa,sak->k", occ_pi.mass, phi)
    return LinearDualStats(c, d, v)


def linear_dual_stats_sampled(occ_pi_hat: OccupancyMeasure, ratio_ref_over_pi, proxy_norm, whitened: WhitenedFeatures) -> LinearDualStats:
    """Same statistics with mu_ref replaced by importance-weighted pi samples."""
    w = OccupancyMeasure(occ_pi_hat.mass * np.asarray(ratio_ref_over_pi, dtype=np.float64), exact=False)
    return linear_dual_stats(occ_pi_hat, w, proxy_norm, whitened)


@dataclass(frozen=True)
class ThetaWeights:
    weights: np.ndarray
    unwhitened: np.ndarray | None = None

    def __post_init__(self):
        if (np.asarray(self.weights) < 0).any():
            raise InvariantError("theta weights must be nonnegative")


def _check_lambda3(duals):
    if not duals.lambda3 < 0:
        raise InvariantError(f"lambda3 must be negative, got {duals.lambda3}")


def _theta(stats, l1, l2, l3):
    return np.maximum(0.0, stats.q(l1, l2) / (2.0 * l3))


def theta_star(duals: DualVariables, stats: LinearDualStats, whitened: WhitenedFeatures | None = None) -> ThetaWeights:
    """Separable minimiser max(0, q_j / (2 lambda3)) in whitened coordinates."""
    _check_lambda3(duals)
    th = _theta(stats, duals.lambda1, duals.lambda2, duals.lambda3)
    raw = None if whitened is None else whitened.transform.T @ th
    return ThetaWeights(th, raw)


def _residual(stats, r, lam):
    th = _theta(stats, *lam)
    return np.array([r - stats.d_phi @ th, -(stats.c_phi @ th), 1.0 - th @ th]), th


def linear_dual_gradients(duals: DualVariables, stats: LinearDualStats, r: float) -> np.ndarray:
    """Gradient of the dual function: (r - D.theta, -C.theta, 1 - |theta|^2)."""
    _check_lambda3(duals)
    return _residual(stats, r, (duals.lambda1, duals.lambda2, duals.lambda3))[0]


def _jacobian(stats, lam, th):
    l1, l2, l3 = lam
    active = th > 0
    q = stats.q(l1, l2)
    dth = np.zeros((th.size, 3))
    dth[active, 0] = -stats.d_phi[active] / (2 * l3)
    dth[active, 1] = -stats.c_phi[active] / (2 * l3)
    dth[active, 2] = -q[active] / (2 * l3 * l3)
    return -np.vstack([stats.d_phi @ dth, stats.c_phi @ dth, 2 * th @ dth])


def _dual_objective(stats, r, lam):
    l1, l2, l3 = lam
    q = stats.q(l1, l2)
    neg = np.minimum(q, 0.0)
    return l1 * r + l3 + float(neg @ neg) / (4 * l3)


def _project(lam):
    lam = np.array(lam, dtype=np.float64)
    lam[2] = min(lam[2], LAMBDA3_CEIL)
    return lam


def solve_linear_duals(
    stats: LinearDualStats,
    spec: CorrelationSpec,
    init: DualVariables | None = None,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> DualVariables:
    """Root of the dual gradient system by damped Gauss-Newton.

    When the damped step cannot reduce the residual (for instance with every
    theta clipped to zero, where the Jacobian vanishes) the solver takes a
    backtracked ascent step on the concave dual function instead.
    """
    r = spec.r
    lam = _project([0.0, 0.0, -1.0] if init is None else [init.lambda1, init.lambda2, init.lambda3])
    f, th = _residual(stats, r, lam)
    norm = float(np.linalg.norm(f))
    best, best_norm = lam.copy(), norm
    mu = 1e-3
    for it in range(max_iter):
        if norm < tol:
            break
        jac = _jacobian(stats, lam, th)
        jtj, jtf = jac.T @ jac, jac.T @ f
        accepted = False
        for _ in range(40):
            step = np.linalg.solve(jtj + mu * (np.diag(np.diag(jtj)) + np.eye(3)), -jtf)
            cand = _project(lam + step)
            f_c, th_c = _residual(stats, r, cand)
            n_c = float(np.linalg.norm(f_c))
            if n_c < norm:
                accepted = True
                mu = max(mu / 3.0, 1e-12)
                break
            mu *= 4.0
            if mu > 1e12:
                break
        if not accepted:
            g0 = _dual_objective(stats, r, lam)
            alpha = 1.0
            for _ in range(60):
                cand = _project(lam + alpha * f)
                if _dual_objective(stats, r, cand) > g0:
                    break
                alpha *= 0.5
            f_c, th_c = _residual(stats, r, cand)
            n_c = float(np.linalg.norm(f_c))
            mu = 1e-3
        lam, f, th, norm = cand, f_c, th_c, n_c
        if norm < best_norm:
            best, best_norm = lam.copy(), norm
    else:
        it = max_iter
    if best_norm < tol:
        best, best_norm = _polish(stats, r, best, best_norm)
    if best_norm >= tol:
        raise DualNonConvergence(
            f"dual solve did not converge: residual {best_norm:.3g} after {it} iterations",
            DualVariables(*best),
            best_norm,
        )
    return DualVariables(*best)


def _polish(stats, r, lam, norm, max_iter=30, floor=1e-14):
    """Undamped Newton steps past the tolerance while the residual keeps falling.

    Feasibility errors in theta feed straight into the inner value, so a
    residual of 1e-6 would otherwise leave value errors of the same order.
    """
    for _ in range(max_iter):
        if norm <= floor:
            break
        f, th = _residual(stats, r, lam)
        # least squares: with centred features C = 0 and the lambda2 column vanishes
        step = np.linalg.lstsq(_jacobian(stats, lam, th), -f, rcond=1e-12)[0]
        cand = _project(lam + step)
        n_c = float(np.linalg.norm(_residual(stats, r, cand)[0]))
        if not n_c < norm:
            break
        lam, norm = cand, n_c
    return lam, norm


def linear_worst_reward(theta: ThetaWeights, whitened: WhitenedFeatures) -> np.ndarray:
    """theta . phi~(s, a), defined on every pair (features are)."""
    return whitened.values @ np.asarray(theta.weights, dtype=np.float64)


def linear_inner_value(theta: ThetaWeights, stats: LinearDualStats) -> float:
    return float(stats.v_phi @ theta.weights)


__all__ = [
    "FeatureMap",
    "WhitenedFeatures",
    "LinearDualStats",
    "ThetaWeights",
    "center_features",
    "compute_Q",
    "compute_Q_sampled",
    "whiten",
    "linear_dual_stats",
    "linear_dual_stats_sampled",
    "theta_star",
    "linear_dual_gradients",
    "solve_linear_duals",
    "linear_worst_reward",
    "linear_inner_value",
]
