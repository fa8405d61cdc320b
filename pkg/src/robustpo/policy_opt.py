"""Outer-loop training for Max-Min, Linear Max-Min and ORPO.

Exact mode uses exact occupancies and exact policy gradients with an Armijo
backtracking line search, so the training objective never decreases.
Sampled mode follows the batch pipeline: trajectories, empirical
occupancies, double-sampled moments, then a few epochs of a clipped
surrogate on the pseudo-reward.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .adversary import EPS_H, CorrelationSpec, DualVariables, dual_solution, robust_stats, robust_value
from .errors import DualNonConvergence, NumericalError, ShapeError
from .linear import (
    FeatureMap,
    ThetaWeights,
    center_features,
    compute_Q,
    compute_Q_sampled,
    linear_dual_stats,
    linear_dual_stats_sampled,
    linear_inner_value,
    linear_worst_reward,
    solve_linear_duals,
    theta_star,
    whiten,
)
from .mdp import OccupancyMeasure, SoftmaxPolicy, exact_occupancy, occupancy_jacobian, policy_gradient, sample_trajectories

log = logging.getLogger(__name__)

KINK_MAX_PAIRS = 4000
ALGORITHMS = ("maxmin", "linear-maxmin", "orpo")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "maxmin"
    r: float = 0.4
    iterations: int = 200
    mode: str = "exact"
    step_size: float = 10.0
    clip_ratio: float | None = 0.2
    seed: int = 0
    init_noise: float = 0.0
    orpo_lambda: float | None = None  # normalised units; None -> sqrt(1 - r^2)
    armijo: float = 1e-4
    max_backtracks: int = 40
    n_trajectories: int = 2000
    horizon: int | None = None
    surrogate_epochs: int = 10
    unseen_penalty: float = -10.0
    discriminator: est.DiscriminatorConfig | None = None
    kink_steps: bool = True  # exact mode: also try the steepest ascent direction of the nonsmooth objective

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.mode not in ("exact", "sampled"):
            raise ValueError(f"mode must be 'exact' or 'sampled', got {self.mode!r}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.clip_ratio is not None and not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be positive")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **row):
        self.records.append(row)

    def __len__(self):
        return len(self.records)

    def column(self, key):
        return [row[key] for row in self.records]

    def fieldnames(self):
        keys = []
        for row in self.records:
            for k in row:
                if k not in keys:
                    keys.append(k)
        return keys

    def write_csv(self, path):
        names = self.fieldnames()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in self.records:
                w.writerow([_fmt(row.get(k, "")) for k in names])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return v


# ---------------------------------------------------------------------------
# pseudo-rewards
# ---------------------------------------------------------------------------


def _ratio_values(ratio):
    if isinstance(ratio, est.LogRatioModel):
        if ratio.direction != "pi_over_ref":
            raise ValueError("pseudo-rewards need a pi_over_ref ratio")
        return ratio.ratio()
    return np.asarray(ratio, dtype=np.float64)


def maxmin_pseudo_reward(ratio, proxy_norm, stats, r: float) -> np.ndarray:
    """proxy - sqrt(1-r^2)/r / sqrt(h) * (L - E * proxy).

    This is the derivative of the robust objective with respect to mu_pi,
    divided by r. Falls back to the proxy when h is degenerate or r = 1.
    """
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    slack = math.sqrt(max(0.0, 1.0 - r * r))
    if slack == 0.0 or stats.h < EPS_H:
        return proxy_norm.copy()
    lr = _ratio_values(ratio)
    if lr.shape != proxy_norm.shape:
        raise ShapeError(f"ratio shape {lr.shape} does not match proxy shape {proxy_norm.shape}")
    return proxy_norm - (slack / r) / math.sqrt(stats.h) * (lr - stats.proxy_mean_pi * proxy_norm)


def orpo_lambda(sigma: float, r: float) -> float:
    """Regularisation weight sigma * sqrt(1 - r^2) for the raw proxy scale."""
    return float(sigma) * math.sqrt(max(0.0, 1.0 - r * r))


def orpo_pseudo_reward(ratio, proxy_norm, chi2: float, lam: float) -> np.ndarray:
    """proxy - lam / sqrt(chi^2) * L; the proxy alone when chi^2 is degenerate."""
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    if lam == 0.0 or chi2 < EPS_H:
        return proxy_norm.copy()
    return proxy_norm - lam / math.sqrt(chi2) * _ratio_values(ratio)


def orpo_objective(occ_pi, occ_ref, proxy_norm, lam) -> float:
    # summed over the reference support exactly as robust_stats does, so that
    # lam = 0 reproduces the r = 1 Max-Min objective bit for bit
    support = est.check_support(occ_pi, occ_ref)
    e = float(np.sum(occ_pi.mass[support] * np.asarray(proxy_norm, dtype=np.float64)[support]))
    return e - lam * math.sqrt(est.chi_squared(occ_pi, occ_ref))


def maxmin_objective(occ_pi, occ_ref, proxy_norm, r) -> float:
    return robust_value(robust_stats(occ_pi, occ_ref, proxy_norm, check=False), CorrelationSpec(r))


# ---------------------------------------------------------------------------
# policy steps
# ---------------------------------------------------------------------------


def policy_gradient_step(policy: SoftmaxPolicy, pseudo, mdp=None, step_size: float = 1.0, batch=None, clip_ratio=None, discount=None, epochs: int = 1) -> SoftmaxPolicy:
    """One ascent step on <mu_pi, pseudo>.

    With an MDP the exact gradient is used. With a trajectory ``batch`` the
    step maximises a clipped importance-ratio surrogate built from
    reward-to-go advantages (tabular state-mean baseline).
    """
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if pseudo.shape != policy.shape:
        raise ShapeError(f"pseudo-reward shape {pseudo.shape} does not match policy shape {policy.shape}")
    if batch is None:
        if mdp is None:
            raise ValueError("exact steps need the MDP")
        g = policy_gradient(mdp, policy, pseudo)
        return SoftmaxPolicy(policy.logits + step_size * g)
    return _surrogate_step(policy, pseudo, batch, discount, step_size, clip_ratio, epochs)


def _advantage_table(batch, pseudo, discount):
    """Discount-weighted advantage sums per (s, a) and per-pair weights."""
    r = pseudo[batch.states, batch.actions]
    g = np.zeros_like(r)
    acc = np.zeros(batch.n)
    for t in range(batch.horizon - 1, -1, -1):
        acc = r[:, t] + discount * acc
        g[:, t] = acc
    w = (1.0 - discount) * discount ** np.arange(batch.horizon)[None, :] / batch.n
    shape = (batch.n_states, batch.n_actions)
    flat = (batch.states * batch.n_actions + batch.actions).ravel()
    sa_w = np.bincount(flat, weights=np.broadcast_to(w, g.shape).ravel(), minlength=shape[0] * shape[1]).reshape(shape)
    sa_g = np.bincount(flat, weights=(w * g).ravel(), minlength=shape[0] * shape[1]).reshape(shape)
    s_w = sa_w.sum(axis=1)
    baseline = np.divide(sa_g.sum(axis=1), s_w, out=np.zeros_like(s_w), where=s_w > 0)
    adv = sa_g - sa_w * baseline[:, None]  # sum of w * (G - b(s)) per pair
    return adv


def _surrogate_step(policy, pseudo, batch, discount, step_size, clip_ratio, epochs):
    if discount is None:
        raise ValueError("sampled steps need the discount")
    adv = _advantage_table(batch, pseudo, discount)
    old = policy.probs
    z = policy.logits.copy()
    for _ in range(max(1, epochs)):
        pi = SoftmaxPolicy(z).probs
        rho = pi / old
        coef = adv.copy()
        if clip_ratio is not None:
            # the clipped branch has zero gradient where it is the active minimum
            frozen = ((adv > 0) & (rho > 1 + clip_ratio)) | ((adv < 0) & (rho < 1 - clip_ratio))
            coef[frozen] = 0.0
        c = coef * rho
        g = c - pi * c.sum(axis=1, keepdims=True)
        if not np.isfinite(g).all():
            raise NumericalError("surrogate gradient is not finite")
        z = z + step_size * g
    return SoftmaxPolicy(z)


def _line_search(objective, logits, grad, f0, cfg, alpha0):
    """Armijo backtracking from ``alpha0``; returns (logits, f, alpha) or None."""
    slope = float(np.sum(grad * grad))
    if slope == 0.0 or not math.isfinite(slope):
        return None
    alpha = alpha0
    for _ in range(cfg.max_backtracks):
        cand = logits + alpha * grad
        try:
            f = objective(cand)
        except (NumericalError, FloatingPointError):
            f = -math.inf
        if f >= f0 + cfg.armijo * alpha * slope:
            return cand, f, alpha
        alpha *= 0.5
    return None


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


def initial_policy(bundle, cfg: TrainConfig) -> SoftmaxPolicy:
    ref = getattr(bundle, "reference", None)
    base = ref.logits.copy() if ref is not None else np.zeros(bundle.mdp.shape)
    if cfg.init_noise > 0:
        base = base + cfg.init_noise * np.random.default_rng(cfg.seed).standard_normal(base.shape)
    return SoftmaxPolicy(base)


def _exact_setup(bundle):
    occ_ref = exact_occupancy(bundle.mdp, bundle.reference)
    moments = est.proxy_moments_exact(occ_ref, bundle.proxy_raw)
    return occ_ref, moments, est.normalize_proxy(bundle.proxy_raw, moments)


def train(bundle, cfg: TrainConfig):
    if cfg.algorithm == "maxmin":
        return train_maxmin(bundle, cfg)
    if cfg.algorithm == "orpo":
        return train_orpo(bundle, cfg)
    return train_linear_maxmin(bundle, cfg)


def steepest_ascent_direction(mdp, policy, occ_ref, proxy_norm, lin: float, pen: float, keep_proxy: bool) -> np.ndarray | None:
    """Min-norm supergradient of lin * <mu, proxy> - pen * |P x| in logit space.

    ``x = mu / sqrt(mu_ref)`` on the reference support and ``P`` projects out
    sqrt(mu_ref) (and sqrt(mu_ref) * proxy unless ``keep_proxy``). Here the
    penalty subgradient ranges over the whole unit ball, which covers the kink
    at x parallel to the removed directions where the plain gradient does not
    exist. Returns None when the support is too small or too large.
    """
    support = occ_ref.mass > 0
    k = int(support.sum())
    if k > KINK_MAX_PAIRS or k < 3:
        return None
    sw = np.sqrt(occ_ref.mass[support] / occ_ref.mass[support].sum())
    p = np.asarray(proxy_norm, dtype=np.float64)[support]
    removed = np.stack([sw] if keep_proxy else [sw, sw * p], axis=1)
    u, _, _ = np.linalg.svd(removed, full_matrices=True)
    null = u[:, removed.shape[1]:]
    g = occupancy_jacobian(mdp, policy)[support.ravel()]  # (k, n_logits)
    b = lin * (g.T @ p)
    a = pen * (g.T @ (null / sw[:, None]))
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        return None
    try:
        ua, sig, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        return None
    keep = sig > sig.max(initial=0.0) * 1e-12
    ua, sig, vt = ua[:, keep], sig[keep], vt[keep]
    c = ua.T @ b

    def coef(nu):
        return sig * c / (sig * sig + nu)

    if np.linalg.norm(coef(0.0)) > 1.0:
        lo, hi = 0.0, max(1.0, float(np.linalg.norm(sig * c)))
        while np.linalg.norm(coef(hi)) > 1.0:
            hi *= 2.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(coef(mid)) > 1.0:
                lo = mid
            else:
                hi = mid
        v = vt.T @ coef(hi)
    else:
        v = vt.T @ coef(0.0)
    return (b - a @ v).reshape(policy.shape)


def _exact_loop(bundle, cfg, objective_fn, direction_fn, record_fn, kink_fn=None):
    """Shared exact-mode ascent with Armijo line search.

    ``direction_fn`` returns the gradient of ``objective_fn``; ``kink_fn``
    optionally returns a second candidate direction and the better step wins.
    """
    policy = initial_policy(bundle, cfg)
    trace = TrainLog()
    alpha = cfg.step_size
    f = objective_fn(policy)

    def obj(z):
        return objective_fn(SoftmaxPolicy(z))

    for it in range(cfg.iterations):
        a0 = min(cfg.step_size, 2.0 * alpha)
        best = _line_search(obj, policy.logits, direction_fn(policy), f, cfg, a0)
        if kink_fn is not None:
            d = kink_fn(policy)
            if d is not None:
                alt = _line_search(obj, policy.logits, d, f, cfg, cfg.step_size)
                if alt is not None and (best is None or alt[1] > best[1]):
                    best = alt
        if best is not None:
            logits, f, alpha = best
            policy = SoftmaxPolicy(logits)
        record_fn(trace, it, policy, f, best is not None)
    return policy, trace


def train_maxmin(bundle, cfg: TrainConfig):
    if cfg.mode == "sampled":
        return _train_sampled(bundle, cfg)
    mdp = bundle.mdp
    occ_ref, moments, proxy = _exact_setup(bundle)
    spec = CorrelationSpec(cfg.r)

    def objective(pol):
        return maxmin_objective(exact_occupancy(mdp, pol), occ_ref, proxy, cfg.r)

    def direction(pol):
        occ = exact_occupancy(mdp, pol)
        stats = robust_stats(occ, occ_ref, proxy, check=False)
        pseudo = maxmin_pseudo_reward(est.ratio_exact(occ, occ_ref), proxy, stats, cfg.r)
        return cfg.r * policy_gradient(mdp, pol, pseudo)

    def record(trace, it, pol, f, moved):
        occ = exact_occupancy(mdp, pol)
        stats = robust_stats(occ, occ_ref, proxy, check=False)
        duals = dual_solution(stats, spec)
        trace.append(
            iteration=it,
            objective=f,
            proxy_return=float(np.sum(occ.mass * bundle.proxy_raw)),
            proxy_norm_return=stats.proxy_mean_pi,
            chi2=stats.chi2,
            h=stats.h,
            lambda1=duals.lambda1,
            lambda2=duals.lambda2,
            lambda3=duals.lambda3,
            degenerate_flag=stats.degenerate,
            stepped=moved,
        )

    def kink(pol):
        slack = math.sqrt(max(0.0, 1.0 - cfg.r**2))
        return steepest_ascent_direction(mdp, pol, occ_ref, proxy, cfg.r, slack, keep_proxy=False)

    return _exact_loop(bundle, cfg, objective, direction, record, kink if cfg.kink_steps else None)


def _orpo_weight(cfg):
    return math.sqrt(max(0.0, 1.0 - cfg.r**2)) if cfg.orpo_lambda is None else float(cfg.orpo_lambda)


def train_orpo(bundle, cfg: TrainConfig):
    if cfg.mode == "sampled":
        return _train_sampled(bundle, cfg)
    mdp = bundle.mdp
    occ_ref, moments, proxy = _exact_setup(bundle)
    lam = _orpo_weight(cfg)

    def objective(pol):
        return orpo_objective(exact_occupancy(mdp, pol), occ_ref, proxy, lam)

    def direction(pol):
        occ = exact_occupancy(mdp, pol)
        chi2 = est.chi_squared(occ, occ_ref)
        return policy_gradient(mdp, pol, orpo_pseudo_reward(est.ratio_exact(occ, occ_ref), proxy, chi2, lam))

    def record(trace, it, pol, f, moved):
        occ = exact_occupancy(mdp, pol)
        stats = robust_stats(occ, occ_ref, proxy, check=False)
        trace.append(
            iteration=it,
            objective=f,
            proxy_return=float(np.sum(occ.mass * bundle.proxy_raw)),
            proxy_norm_return=stats.proxy_mean_pi,
            chi2=stats.chi2,
            h=stats.h,
            lambda_orpo=lam,
            degenerate_flag=stats.chi2 < EPS_H,
            stepped=moved,
        )

    def kink(pol):
        return steepest_ascent_direction(mdp, pol, occ_ref, proxy, 1.0, lam, keep_proxy=True)

    return _exact_loop(bundle, cfg, objective, direction, record, kink if cfg.kink_steps else None)


@dataclass
class _LinearState:
    duals: DualVariables | None = None


def linear_inner_problem(occ_pi, occ_ref, proxy, features: FeatureMap, r, init=None, center=True):
    """Whitened features, stats, duals and theta* for one policy (exact occupancies).

    Returns ``(whitened, stats, duals, theta, converged)``. Without
    convergence the best iterate is returned with theta renormalised onto the
    unit sphere (all-zero theta falls back to the proxy-aligned direction).
    """
    feats = center_features(features, occ_ref) if center else features
    wf = whiten(compute_Q(occ_ref, feats), feats)
    stats = linear_dual_stats(occ_pi, occ_ref, proxy, wf)
    try:
        duals = solve_linear_duals(stats, CorrelationSpec(r), init=init)
        converged = True
    except DualNonConvergence as exc:
        duals, converged = exc.best, False
    theta = theta_star(duals, stats, wf)
    if not converged:
        theta = _renormalised(theta, stats, wf)
    return wf, stats, duals, theta, converged


def _renormalised(theta, stats, wf):
    w = theta.weights
    n = float(np.linalg.norm(w))
    if n == 0.0:
        w = np.maximum(stats.d_phi, 0.0)
        n = float(np.linalg.norm(w))
        if n == 0.0:
            w, n = np.ones_like(w), math.sqrt(w.size)
    w = w / n
    return ThetaWeights(w, wf.transform.T @ w)


def train_linear_maxmin(bundle, cfg: TrainConfig):
    if bundle.features is None:
        raise ValueError("linear Max-Min needs a feature map")
    if cfg.mode == "sampled":
        return _train_sampled(bundle, cfg)
    mdp = bundle.mdp
    occ_ref, moments, proxy = _exact_setup(bundle)
    policy = initial_policy(bundle, cfg)
    trace = TrainLog()
    state = _LinearState()
    alpha = cfg.step_size
    for it in range(cfg.iterations):
        occ = exact_occupancy(mdp, policy)
        wf, stats, duals, theta, converged = linear_inner_problem(occ, occ_ref, proxy, bundle.features, cfg.r)
        if converged:
            state.duals = duals
        elif state.duals is not None:
            log.info("iteration %d: dual solve did not converge; reusing previous duals", it)
            duals = state.duals
            theta = theta_star(duals, stats, wf)
            if not theta.weights.any():
                theta = _renormalised(theta, stats, wf)
        reward = linear_worst_reward(theta, wf)

        def objective(z, reward=reward):
            return float(np.sum(exact_occupancy(mdp, SoftmaxPolicy(z)).mass * reward))

        f0 = float(np.sum(occ.mass * reward))
        grad = policy_gradient(mdp, policy, reward)
        found = _line_search(objective, policy.logits, grad, f0, cfg, min(cfg.step_size, 2.0 * alpha))
        if found is not None:
            logits, f1, alpha = found
            policy = SoftmaxPolicy(logits)
        else:
            f1 = f0
        row = dict(
            iteration=it,
            objective=f1,
            inner_value=linear_inner_value(theta, stats),
            proxy_return=float(np.sum(exact_occupancy(mdp, policy).mass * bundle.proxy_raw)),
            lambda1=duals.lambda1,
            lambda2=duals.lambda2,
            lambda3=duals.lambda3,
            converged=converged,
            theta_norm_sq=float(theta.weights @ theta.weights),
            stepped=found is not None,
        )
        for j, v in enumerate(theta.weights):
            row[f"theta_{j}"] = float(v)
        trace.append(**row)
    return policy, trace


# ---------------------------------------------------------------------------
# sampled mode
# ---------------------------------------------------------------------------


def _train_sampled(bundle, cfg: TrainConfig):
    mdp = bundle.mdp
    gamma = mdp.discount
    horizon = cfg.horizon or mdp.default_horizon()
    seeds = np.random.SeedSequence(cfg.seed)
    ref_a, ref_b, loop_seq = seeds.spawn(3)
    n = cfg.n_trajectories
    batch_ref = sample_trajectories(mdp, bundle.reference, n, horizon, np.random.default_rng(ref_a))
    batch_ref2 = sample_trajectories(mdp, bundle.reference, n, horizon, np.random.default_rng(ref_b))
    moments = est.proxy_moments_ref(batch_ref, batch_ref2, bundle.proxy_raw, gamma)
    proxy = est.normalize_proxy(bundle.proxy_raw, moments)
    occ_ref_hat = est.empirical_occupancy(batch_ref, gamma)
    seen = occ_ref_hat.mass > 0
    lam = _orpo_weight(cfg)

    policy = initial_policy(bundle, cfg)
    trace = TrainLog()
    prev_duals = None
    for it, seq in zip(range(cfg.iterations), loop_seq.spawn(max(cfg.iterations, 1))):
        sa, sb, sd = seq.spawn(3)
        batch = sample_trajectories(mdp, policy, n, horizon, np.random.default_rng(sa))
        batch2 = sample_trajectories(mdp, policy, n, horizon, np.random.default_rng(sb))
        occ_hat = est.empirical_occupancy(batch, gamma)
        if cfg.discriminator is not None:
            dcfg = replace(cfg.discriminator, seed=int(sd.generate_state(1)[0]), direction="pi_over_ref")
            ratio_model = est.train_ratio_estimator(batch_ref, batch, dcfg, gamma)
        else:
            ratio_model = _empirical_ratio(occ_hat, occ_ref_hat)
        lr = ratio_model.ratio()
        chi2 = max(0.0, est.chi_squared_sampled(batch, ratio_model, gamma))
        e = est.batch_return(batch, proxy, gamma)
        e2 = est.double_sample_square(batch, batch2, proxy, gamma)
        h = max(0.0, chi2 - e2)
        row = dict(iteration=it, proxy_return=est.batch_return(batch, bundle.proxy_raw, gamma), proxy_norm_return=e, chi2=chi2, h=h)
        if cfg.algorithm == "maxmin":
            stats = _SampledStats(chi2, e, h)
            pseudo = maxmin_pseudo_reward(lr, proxy, stats, cfg.r)
            row["objective"] = cfg.r * e - math.sqrt(max(0.0, 1 - cfg.r**2)) * math.sqrt(h)
            row["degenerate_flag"] = h < EPS_H
        elif cfg.algorithm == "orpo":
            pseudo = orpo_pseudo_reward(lr, proxy, chi2, lam)
            row["objective"] = e - lam * math.sqrt(chi2)
            row["degenerate_flag"] = chi2 < EPS_H
        else:
            pseudo, prev_duals, extra = _sampled_linear_reward(bundle, cfg, occ_hat, occ_ref_hat, proxy, prev_duals)
            row.update(extra)
        pseudo = np.where(seen, pseudo, cfg.unseen_penalty)
        policy = policy_gradient_step(policy, pseudo, batch=batch, step_size=cfg.step_size, clip_ratio=cfg.clip_ratio, discount=gamma, epochs=cfg.surrogate_epochs)
        trace.append(**row)
    return policy, trace


@dataclass(frozen=True)
class _SampledStats:
    chi2: float
    proxy_mean_pi: float
    h: float


def _empirical_ratio(occ_hat: OccupancyMeasure, occ_ref_hat: OccupancyMeasure) -> est.LogRatioModel:
    support = occ_ref_hat.mass > 0
    table = np.where(support, occ_hat.mass / np.where(support, occ_ref_hat.mass, 1.0), 0.0)
    with np.errstate(divide="ignore"):
        logr = np.where(table > 0, np.log(np.where(table > 0, table, 1.0)), -np.inf)
    return est.LogRatioModel("exact-table", logr, support, "pi_over_ref", {"ratio": table})


def _sampled_linear_reward(bundle, cfg, occ_hat, occ_ref_hat, proxy, prev_duals):
    visited = occ_hat.mass > 0
    w = np.where(visited, occ_ref_hat.mass / np.where(visited, occ_hat.mass, 1.0), 0.0)
    feats = center_features(bundle.features, occ_ref_hat)
    wf = whiten(compute_Q_sampled(occ_hat, w, feats), feats)
    stats = linear_dual_stats_sampled(occ_hat, w, proxy, wf)
    try:
        duals = solve_linear_duals(stats, CorrelationSpec(cfg.r))
        converged = True
    except DualNonConvergence as exc:
        converged = False
        duals = prev_duals if prev_duals is not None else exc.best
    theta = theta_star(duals, stats, wf)
    if not converged and (prev_duals is None or not theta.weights.any()):
        theta = _renormalised(theta, stats, wf)
    extra = dict(objective=linear_inner_value(theta, stats), lambda1=duals.lambda1, lambda2=duals.lambda2, lambda3=duals.lambda3, converged=converged)
    for j, v in enumerate(theta.weights):
        extra[f"theta_{j}"] = float(v)
    return linear_worst_reward(theta, wf), (duals if converged else prev_duals), extra


__all__ = [
    "TrainConfig",
    "TrainLog",
    "maxmin_pseudo_reward",
    "orpo_pseudo_reward",
    "orpo_lambda",
    "orpo_objective",
    "maxmin_objective",
    "policy_gradient_step",
    "steepest_ascent_direction",
    "initial_policy",
    "linear_inner_problem",
    "train",
    "train_maxmin",
    "train_orpo",
    "train_linear_maxmin",
]
