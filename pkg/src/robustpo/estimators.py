"""Occupancy, moment, divergence and density-ratio estimators.

Exact-mode helpers take occupancy measures directly; sampled-mode helpers
take trajectory batches and mirror the batch estimators used by the
sampled training loops.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateProxyError,
    DivergenceError,
    IndependenceError,
    ShapeError,
    SupportError,
)
from .mdp import OccupancyMeasure, TrajectoryBatch

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
LOGIT_CLIP = 30.0


@dataclass(frozen=True)
class ProxyMoments:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateProxyError(f"proxy std must be positive, got {self.std}")


# ---------------------------------------------------------------------------
# occupancy and returns
# ---------------------------------------------------------------------------


def empirical_occupancy(batch: TrajectoryBatch, discount: float) -> OccupancyMeasure:
    """(1-g)/N * sum_i sum_t g^t 1{s_t = s, a_t = a}."""
    if batch.n == 0 or batch.horizon == 0:
        raise ValueError("empirical occupancy needs a nonempty batch")
    counts = _kernels.discounted_counts(batch.states, batch.actions, batch.n_states, batch.n_actions, discount)
    mass = (1.0 - discount) * counts / batch.n
    return OccupancyMeasure(mass, deficit=float(discount) ** batch.horizon, exact=False)


def trajectory_returns(batch: TrajectoryBatch, reward, discount: float) -> np.ndarray:
    """Per-trajectory (1-g) * sum_t g^t reward(s_t, a_t)."""
    reward = _as_table(reward, (batch.n_states, batch.n_actions))
    return (1.0 - discount) * _kernels.discounted_returns(batch.states, batch.actions, reward, discount)


def batch_return(batch: TrajectoryBatch, reward, discount: float) -> float:
    return float(trajectory_returns(batch, reward, discount).mean())


def _as_table(reward, shape):
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != tuple(shape):
        raise ShapeError(f"reward shape {reward.shape} does not match {tuple(shape)}")
    if not np.isfinite(reward).all():
        raise ValueError("reward table has non-finite entries")
    return reward


# ---------------------------------------------------------------------------
# proxy moments
# ---------------------------------------------------------------------------


def double_sample_square(batch_a: TrajectoryBatch, batch_b: TrajectoryBatch, reward, discount: float) -> float:
    """Unbiased estimate of <mu, reward>**2 from two independent batches."""
    if batch_a is batch_b or (batch_a.seed is not None and batch_a.seed == batch_b.seed):
        raise IndependenceError(f"double sampling needs independent batches (both seeded with {batch_a.seed!r})")
    return batch_return(batch_a, reward, discount) * batch_return(batch_b, reward, discount)


def proxy_moments_ref(batch_ref: TrajectoryBatch, batch_ref_star: TrajectoryBatch, raw_proxy, discount: float) -> ProxyMoments:
    mean = batch_return(batch_ref, raw_proxy, discount)
    raw = np.asarray(raw_proxy, dtype=np.float64)
    second = batch_return(batch_ref, raw * raw, discount)
    var = second - double_sample_square(batch_ref, batch_ref_star, raw, discount)
    return _moments(mean, var)


def proxy_moments_exact(occ_ref: OccupancyMeasure, raw_proxy) -> ProxyMoments:
    raw = _as_table(raw_proxy, occ_ref.shape)
    w = occ_ref.mass / occ_ref.mass.sum()
    mean = float(np.sum(w * raw))
    var = float(np.sum(w * (raw - mean) ** 2))
    return _moments(mean, var)


def _moments(mean, var):
    std = math.sqrt(var) if var > 0 else 0.0
    if std <= STD_FLOOR:
        raise DegenerateProxyError(f"proxy reward is (near) constant under the reference policy: std={std:.3g}")
    return ProxyMoments(float(mean), std)


def normalize_proxy(raw_proxy, moments: ProxyMoments) -> np.ndarray:
    raw = np.asarray(raw_proxy, dtype=np.float64)
    return (raw - moments.mean) / max(moments.std, STD_FLOOR)


# ---------------------------------------------------------------------------
# divergence and ratios
# ---------------------------------------------------------------------------


def check_support(occ_pi: OccupancyMeasure, occ_ref: OccupancyMeasure, atol: float = 0.0) -> np.ndarray:
    """Return the reference support; raise if pi puts mass outside it."""
    if occ_pi.shape != occ_ref.shape:
        raise ShapeError(f"occupancy shapes differ: {occ_pi.shape} vs {occ_ref.shape}")
    support = occ_ref.mass > 0
    bad = (~support) & (occ_pi.mass > atol)
    if bad.any():
        pairs = [tuple(int(i) for i in p) for p in np.argwhere(bad)]
        raise SupportError(f"policy visits {len(pairs)} pair(s) the reference never visits", pairs)
    return support


def chi_squared(occ_pi: OccupancyMeasure, occ_ref: OccupancyMeasure) -> float:
    support = check_support(occ_pi, occ_ref)
    p, q = occ_pi.mass[support], occ_ref.mass[support]
    return max(0.0, float(np.sum(p * p / q)) - 1.0)


def chi_squared_sampled(batch_pi: TrajectoryBatch, ratio: "LogRatioModel", discount: float) -> float:
    """E_{D_pi}[L - 1] with L from ``ratio`` (direction pi_over_ref)."""
    if ratio.direction != "pi_over_ref":
        raise ValueError("chi-squared needs a pi_over_ref ratio model")
    return batch_return(batch_pi, ratio.ratio() - 1.0, discount)


@dataclass(frozen=True)
class LogRatioModel:
    """log(mu_num / mu_den) per (s, a).

    ``direction`` is ``"pi_over_ref"`` (Max-Min) or ``"ref_over_pi"`` (linear
    pipeline). ``support`` marks pairs where the ratio is defined; in exact
    mode that is the denominator's support.
    """

    mode: str
    log_ratio: np.ndarray
    support: np.ndarray
    direction: str = "pi_over_ref"
    params: dict = field(default_factory=dict)
    loss_log: tuple = ()

    def ratio(self) -> np.ndarray:
        """exp of the clipped log-ratio; 0 off the support."""
        if "ratio" in self.params:
            return self.params["ratio"]
        z = np.where(self.support, self.log_ratio, 0.0)
        if self.mode == "learned":
            z = np.clip(z, -LOGIT_CLIP, LOGIT_CLIP)
        return np.where(self.support, np.exp(z), 0.0)

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.loss_log):
                w.writerow([i, f"{v:.17g}"])


def ratio_exact(occ_pi: OccupancyMeasure, occ_ref: OccupancyMeasure, direction: str = "pi_over_ref", allow_unseen: bool = False) -> LogRatioModel:
    """Tabulated log(mu_num / mu_den) on the denominator's support.

    ``allow_unseen`` skips the absolute-continuity check (evaluation of
    policies that leave the reference support).
    """
    if direction == "pi_over_ref":
        num, den = occ_pi, occ_ref
    elif direction == "ref_over_pi":
        num, den = occ_ref, occ_pi
    else:
        raise ValueError(f"unknown direction {direction!r}")
    support = (den.mass > 0) if allow_unseen else check_support(num, den)
    with np.errstate(divide="ignore"):
        logr = np.where(support, np.log(np.where(support, num.mass, 1.0)) - np.log(np.where(support, den.mass, 1.0)), 0.0)
    # pairs the numerator never visits have ratio 0 exactly
    logr = np.where(support & (num.mass == 0), -np.inf, logr)
    table = np.where(support, num.mass / np.where(support, den.mass, 1.0), 0.0)
    return LogRatioModel("exact-table", logr, support, direction, {"ratio": table})


# ---------------------------------------------------------------------------
# discriminator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorConfig:
    epochs: int = 3000
    lr: float = 2.0
    hidden: int = 32
    minibatch: int | None = None
    init_scale: float = 1.0
    seed: int = 0
    direction: str = "pi_over_ref"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def discriminator_loss(d, w_pos, w_neg) -> float:
    """E_pos[log(1 + e^-d)] + E_neg[log(1 + e^d)]."""
    return float(np.sum(w_pos * _softplus(-d)) + np.sum(w_neg * _softplus(d)))


def train_ratio_estimator(batch_ref: TrajectoryBatch, batch_pi: TrajectoryBatch, config: DiscriminatorConfig = DiscriminatorConfig(), discount: float = 0.99) -> LogRatioModel:
    """Fit d(s, a) ~ log(mu_pos / mu_neg) with a logistic discriminator.

    The positive class is pi for ``pi_over_ref`` and the reference for
    ``ref_over_pi``. Expectations use the discounted empirical occupancies of
    the two batches, so a full-batch step is the exact gradient of the
    empirical loss. Inputs are one-hot (s, a) codes, so the hidden layer is a
    row lookup.
    """
    if batch_ref.n == 0 or batch_pi.n == 0:
        raise ValueError("discriminator training needs two nonempty batches")
    occ_ref = empirical_occupancy(batch_ref, discount).mass
    occ_pi = empirical_occupancy(batch_pi, discount).mass
    if config.direction == "pi_over_ref":
        pos, neg = occ_pi, occ_ref
    elif config.direction == "ref_over_pi":
        pos, neg = occ_ref, occ_pi
    else:
        raise ValueError(f"unknown direction {config.direction!r}")
    shape = pos.shape
    w_pos = (pos / pos.sum()).ravel()
    w_neg = (neg / neg.sum()).ravel()
    n_in = w_pos.size

    rng = np.random.default_rng(config.seed)
    w1 = rng.normal(0.0, config.init_scale, size=(n_in, config.hidden))
    b1 = np.zeros(config.hidden)
    w2 = np.zeros(config.hidden)
    b2 = 0.0

    losses = []
    for epoch in range(config.epochs + 1):
        if config.minibatch:
            idx_p = rng.choice(n_in, size=config.minibatch, p=w_pos)
            idx_n = rng.choice(n_in, size=config.minibatch, p=w_neg)
            cp = np.bincount(idx_p, minlength=n_in) / config.minibatch
            cn = np.bincount(idx_n, minlength=n_in) / config.minibatch
        else:
            cp, cn = w_pos, w_neg
        h = np.tanh(w1 + b1)
        d = h @ w2 + b2
        loss = discriminator_loss(d, w_pos, w_neg)
        if not math.isfinite(loss):
            raise DivergenceError(f"discriminator loss diverged at epoch {epoch}; try a smaller step size")
        losses.append(loss)
        if epoch == config.epochs:
            break
        # dL/dd per input code
        g = -cp * _sigmoid(-d) + cn * _sigmoid(d)
        gw2 = h.T @ g
        gb2 = g.sum()
        gh = np.outer(g, w2) * (1.0 - h * h)
        w1 -= config.lr * gh
        b1 -= config.lr * gh.sum(axis=0)
        w2 = w2 - config.lr * gw2
        b2 -= config.lr * gb2

    d = np.clip(np.tanh(w1 + b1) @ w2 + b2, -LOGIT_CLIP, LOGIT_CLIP).reshape(shape)
    support = (occ_ref > 0) if config.direction == "pi_over_ref" else (occ_pi > 0)
    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    log.debug("discriminator loss %.6f -> %.6f over %d epochs", losses[0], losses[-1], config.epochs)
    return LogRatioModel("learned", d, support, config.direction, params, tuple(losses))


__all__ = [
    "ProxyMoments",
    "LogRatioModel",
    "DiscriminatorConfig",
    "empirical_occupancy",
    "trajectory_returns",
    "batch_return",
    "double_sample_square",
    "proxy_moments_ref",
    "proxy_moments_exact",
    "normalize_proxy",
    "check_support",
    "chi_squared",
    "chi_squared_sampled",
    "ratio_exact",
    "train_ratio_estimator",
    "discriminator_loss",
]
