"""Evaluation: worst-case metrics, feasible-theta sweeps, improvement bound checks.

Evaluation always uses exact occupancies so every metric is deterministic.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimators as est
from .adversary import CorrelationSpec, dual_solution, improvement_lower_bound, robust_stats, robust_value, worst_case_reward
from .errors import InfeasibleSamplingWarning, ShapeError, SupportError, BoundViolation
from .linear import FeatureMap, linear_inner_value
from .mdp import SoftmaxPolicy, exact_occupancy
from .oracle import sample_feasible_rewards
from .policy_opt import TrainConfig, linear_inner_problem, train

log = logging.getLogger(__name__)

DEFAULT_R_MIN = -10.0
MIN_ACCEPTANCE = 1e-4
BOUND_TOL = 1e-8


def _reference_setup(bundle):
    occ_ref = exact_occupancy(bundle.mdp, bundle.reference)
    moments = est.proxy_moments_exact(occ_ref, bundle.proxy_raw)
    return occ_ref, est.normalize_proxy(bundle.proxy_raw, moments)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    policy_id: str
    r_used: float
    true_return: float
    proxy_return: float
    worst: float
    occ_unseen: float
    r_min: float
    worst_star: float
    linear_worst: float | None = None
    theta: tuple = ()
    linear_converged: bool | None = None

    def as_dict(self, n_theta=None):
        row = {
            "policy_id": self.policy_id,
            "r": self.r_used,
            "true_return": self.true_return,
            "proxy_return": self.proxy_return,
            "worst": self.worst,
            "occ_unseen": self.occ_unseen,
            "r_min": self.r_min,
            "worst_star": self.worst_star,
            "linear_worst": "" if self.linear_worst is None else self.linear_worst,
        }
        k = len(self.theta) if n_theta is None else n_theta
        for j in range(k):
            row[f"theta_{j}"] = self.theta[j] if j < len(self.theta) else ""
        return row


def write_metrics_csv(rows, path):
    k = max((len(r.theta) for r in rows), default=0)
    dicts = [r.as_dict(k) for r in rows]
    names = list(MetricsRow("", 0, 0, 0, 0, 0, 0, 0).as_dict(k).keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for d in dicts:
            w.writerow([_fmt(d[n]) for n in names])


def evaluate_policy(
    bundle,
    policy: SoftmaxPolicy,
    spec: CorrelationSpec,
    r_min: float = DEFAULT_R_MIN,
    policy_id: str = "",
    linear: bool = False,
) -> MetricsRow:
    """True/proxy returns, Worst over seen pairs, unseen mass and Worst*.

    Worst is <mu_pi, R*> on the reference support with R* the closed-form
    adversary; at the reference itself (h below the floor) the closed form
    value is used directly since R* divides by a vanishing lambda3.
    """
    occ_ref, proxy = _reference_setup(bundle)
    occ = exact_occupancy(bundle.mdp, policy)
    seen = occ_ref.mass > 0
    stats = robust_stats(occ, occ_ref, proxy, allow_unseen=True)
    duals = dual_solution(stats, spec)
    if duals.degenerate or duals.r_one:
        worst = robust_value(stats, spec)
    else:
        reward = worst_case_reward(est.ratio_exact(occ, occ_ref, allow_unseen=True), proxy, duals, spec)
        worst = float(np.sum(occ.mass[seen] * np.ma.getdata(reward)[seen]))
    occ_unseen = float(occ.mass[~seen].sum())
    lin_worst, theta, converged = None, (), None
    if linear:
        if bundle.features is None:
            raise ValueError("linear evaluation needs a feature map")
        _, lstats, _, th, converged = linear_inner_problem(occ, occ_ref, proxy, bundle.features, spec.r)
        lin_worst = linear_inner_value(th, lstats)
        theta = tuple(float(x) for x in th.unwhitened)
    return MetricsRow(
        policy_id=policy_id,
        r_used=spec.r,
        true_return=float(np.sum(occ.mass * bundle.true_raw)),
        proxy_return=float(np.sum(occ.mass * bundle.proxy_raw)),
        worst=float(worst),
        occ_unseen=occ_unseen,
        r_min=float(r_min),
        worst_star=float(worst) + occ_unseen * float(r_min),
        linear_worst=lin_worst,
        theta=theta,
        linear_converged=converged,
    )


def worst_across_r(bundle, policy, r_grid):
    """Worst of one policy evaluated at each r in ``r_grid``."""
    return [evaluate_policy(bundle, policy, CorrelationSpec(r)).worst for r in r_grid]


# ---------------------------------------------------------------------------
# feasible theta sampling
# ---------------------------------------------------------------------------


class _CorrelationGeometry:
    """mu_ref-weighted moments needed to correlate theta . phi with the proxy."""

    def __init__(self, occ_ref, features: FeatureMap, proxy):
        proxy = np.asarray(proxy, dtype=np.float64)
        if features.shape != occ_ref.shape or proxy.shape != occ_ref.shape:
            raise ShapeError("features, proxy and occupancy must share the (S, A) shape")
        seen = occ_ref.mass > 0
        w = occ_ref.mass[seen] / occ_ref.mass[seen].sum()
        phi = features.values[seen]
        p = proxy[seen]
        phi_c = phi - w @ phi
        p_c = p - w @ p
        self.cov = (phi_c * w[:, None]).T @ phi_c
        self.cross = phi_c.T @ (w * p_c)
        self.p_std = math.sqrt(float(w @ (p_c * p_c)))

    def correlation(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        var = np.einsum("nk,kl,nl->n", thetas, self.cov, thetas)
        num = thetas @ self.cross
        out = np.full(thetas.shape[0], np.nan)
        ok = var > 1e-300
        out[ok] = num[ok] / (np.sqrt(var[ok]) * self.p_std)
        return out


def correlation_under_reference(theta, occ_ref, features: FeatureMap, proxy) -> float:
    """Pearson correlation of theta . phi with the proxy under mu_ref."""
    return float(_CorrelationGeometry(occ_ref, features, proxy).correlation(np.asarray(theta, dtype=np.float64))[0])


@dataclass(frozen=True)
class ThetaSample:
    thetas: np.ndarray  # (n_accepted, k)
    n_proposed: int

    @property
    def n_accepted(self) -> int:
        return self.thetas.shape[0]


def sample_feasible_thetas(
    occ_ref,
    features: FeatureMap,
    proxy_norm,
    r: float,
    n: int,
    tol: float = 0.02,
    rng=None,
    max_proposals: int = 2_000_000,
    chunk: int = 20000,
) -> ThetaSample:
    """Rejection sampling of theta ~ U[0, 1]^k with |corr(theta . phi, proxy) - r| <= tol.

    Stops after ``n`` acceptances or ``max_proposals`` draws. Warns when the
    acceptance rate falls below 1e-4.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    geo = _CorrelationGeometry(occ_ref, features, proxy_norm)
    rng = np.random.default_rng(rng)
    k = features.dim
    accepted, proposed, n_acc = [], 0, 0
    lo, hi = math.inf, -math.inf
    while n_acc < n and proposed < max_proposals:
        m = min(chunk, max_proposals - proposed)
        cand = rng.random((m, k))
        corr = geo.correlation(cand)
        proposed += m
        finite = np.isfinite(corr)
        if finite.any():
            lo, hi = min(lo, float(corr[finite].min())), max(hi, float(corr[finite].max()))
        ok = np.flatnonzero(finite & (np.abs(corr - r) <= tol))
        if ok.size:
            take = cand[ok[: n - n_acc]]
            accepted.append(take)
            n_acc += take.shape[0]
            if n_acc >= n:
                # count proposals only up to the last accepted draw
                proposed -= m - (int(ok[take.shape[0] - 1]) + 1)
    thetas = np.concatenate(accepted) if accepted else np.zeros((0, k))
    rate = thetas.shape[0] / proposed
    if rate < MIN_ACCEPTANCE:
        warnings.warn(
            InfeasibleSamplingWarning(
                f"acceptance rate {rate:.3g} below {MIN_ACCEPTANCE:g} at r={r} (tol {tol}): "
                f"{thetas.shape[0]} of {proposed} accepted, sampled correlations span [{lo:.4f}, {hi:.4f}]"
            ),
            stacklevel=2,
        )
    return ThetaSample(thetas, proposed)


# ---------------------------------------------------------------------------
# robustness sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    r: float
    policy_id: str
    mean: float
    std: float
    n_accepted: int
    n_proposed: int
    std_defined: bool = True


@dataclass
class SweepResult:
    cells: list = field(default_factory=list)

    FIELDS = ("r", "policy_id", "mean", "std", "n_accepted", "n_proposed")

    def get(self, r, policy_id) -> SweepCell:
        for c in self.cells:
            if c.policy_id == policy_id and math.isclose(c.r, r):
                return c
        raise KeyError((r, policy_id))

    def r_values(self):
        return sorted({c.r for c in self.cells})

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for c in self.cells:
                w.writerow([_fmt(getattr(c, f)) for f in self.FIELDS])


def _as_items(policies):
    if isinstance(policies, dict):
        return list(policies.items())
    items = []
    for i, p in enumerate(policies):
        items.append(p if isinstance(p, tuple) else (f"policy_{i}", p))
    return items


def robustness_sweep(bundle, policies, r_grid, n_samples: int, rng=None, tol: float = 0.02, max_proposals: int = 2_000_000) -> SweepResult:
    """Mean and std of <mu_pi, theta . phi> over feasible theta, per (r, policy).

    Features stay on their raw scale. Each r gets its own child seed and all
    policies are scored on the same accepted thetas, so comparisons within a
    row are paired.
    """
    if len(r_grid) == 0:
        raise ValueError("r grid must not be empty")
    if bundle.features is None:
        raise ValueError("the sweep needs a feature map")
    items = _as_items(policies)
    occ_ref = exact_occupancy(bundle.mdp, bundle.reference)
    feats = bundle.features.values
    means = {pid: np.einsum("sa,sak->k", exact_occupancy(bundle.mdp, pol).mass, feats) for pid, pol in items}
    seeds = np.random.SeedSequence(rng if isinstance(rng, (int, np.integer)) or rng is None else int(np.random.default_rng(rng).integers(2**63))).spawn(len(r_grid))
    result = SweepResult()
    for r, seed in zip(r_grid, seeds):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", InfeasibleSamplingWarning)
            sample = sample_feasible_thetas(occ_ref, bundle.features, bundle.proxy_raw, r, n_samples, tol, np.random.default_rng(seed), max_proposals)
        for w in caught:
            log.warning("sweep cell r=%s: %s", r, w.message)
            warnings.warn(w.message, InfeasibleSamplingWarning, stacklevel=2)
        for pid, _ in items:
            vals = sample.thetas @ means[pid]
            n_acc = vals.size
            mean = float(vals.mean()) if n_acc else math.nan
            defined = n_acc > 1
            std = float(vals.std(ddof=1)) if defined else 0.0
            result.cells.append(SweepCell(float(r), pid, mean, std, n_acc, sample.n_proposed, defined))
    return result


# ---------------------------------------------------------------------------
# improvement bound verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    bound: float
    margins: np.ndarray
    n_violations: int

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    def summary(self) -> dict:
        q = np.quantile(self.margins, [0.0, 0.05, 0.5, 0.95, 1.0])
        return {"bound": self.bound, "n": int(self.margins.size), "violations": self.n_violations, "quantiles": q.tolist()}


def verify_theorem1(bundle, policy: SoftmaxPolicy, spec: CorrelationSpec, n_rewards: int = 1000, rng=None) -> BoundReport:
    """Check J(pi, R) - J(pi_ref, R) >= bound for sphere-sampled feasible rewards R.

    The bound is V * (r E - sqrt(1 - r^2) sqrt(h)). Any sample falling more
    than 1e-8 below it raises ``BoundViolation``.
    """
    occ_ref, proxy = _reference_setup(bundle)
    occ = exact_occupancy(bundle.mdp, policy)
    unseen = (occ.mass > 0) & (occ_ref.mass <= 0)
    if unseen.any():
        raise SupportError("the improvement bound needs the policy supported on the reference support", list(zip(*np.nonzero(unseen))))
    stats = robust_stats(occ, occ_ref, proxy)
    bound = spec.std_v * improvement_lower_bound(stats, spec)
    rewards = sample_feasible_rewards(occ_ref.mass, proxy, spec.r, n_rewards, rng, spec.mean_m, spec.std_v)
    diff = np.einsum("nsa,sa->n", rewards, occ.mass - occ_ref.mass)
    margins = diff - bound
    bad = np.flatnonzero(margins < -BOUND_TOL)
    if bad.size:
        raise BoundViolation(f"{bad.size} of {n_rewards} sampled rewards fall below the bound {bound:.6g} (worst margin {margins.min():.3g})")
    return BoundReport(bound, margins, 0)


# ---------------------------------------------------------------------------
# r grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridRow:
    r: float
    worst: float
    true_return: float
    proxy_return: float


def _grid_job(args):
    bundle, cfg = args
    policy, _ = train(bundle, cfg)
    m = evaluate_policy(bundle, policy, CorrelationSpec(cfg.r))
    return GridRow(cfg.r, m.worst, m.true_return, m.proxy_return), policy


def r_grid_search(bundle, algorithm: str, r_grid, config: TrainConfig | None = None, jobs: int = 1, return_policies: bool = False):
    """Train one policy per r and pick the best Worst at its own r.

    Ties go to the smaller r. Returns ``(best_r, table)`` and, with
    ``return_policies``, the trained policies keyed by r as a third item.
    """
    if len(r_grid) == 0:
        raise ValueError("r grid must not be empty")
    base = config or TrainConfig()
    tasks = [(bundle, replace(base, algorithm=algorithm, r=float(r))) for r in sorted(r_grid)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_grid_job, tasks))
    else:
        out = [_grid_job(t) for t in tasks]
    table = [row for row, _ in out]
    best = table[0]
    for row in table[1:]:
        if row.worst > best.worst:
            best = row
    if return_policies:
        return best.r, table, {row.r: pol for row, pol in out}
    return best.r, table


__all__ = [
    "DEFAULT_R_MIN",
    "MetricsRow",
    "write_metrics_csv",
    "evaluate_policy",
    "worst_across_r",
    "correlation_under_reference",
    "ThetaSample",
    "sample_feasible_thetas",
    "SweepCell",
    "SweepResult",
    "robustness_sweep",
    "BoundReport",
    "verify_theorem1",
    "GridRow",
    "r_grid_search",
]
