"""Closed-form inner minimisation over correlation-constrained reward sets.

The uncertainty set holds every reward R with, under mu_ref,
mean M, standard deviation V and correlation r with the normalised proxy.
Against a fixed policy the minimising reward and its value are available in
closed form; this module computes them together with their dual variables.

All quantities are restricted to the support of mu_ref. For evaluation the
policy may also put mass outside that support ("unseen" pairs); the stats
then carry the seen mass ``m`` and the formulas below reduce to the usual
ones when ``m == 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvariantError, NormalizationError, ShapeError
from .estimators import LogRatioModel, check_support
from .mdp import OccupancyMeasure

EPS_H = 1e-12
NORM_TOL = 1e-6


@dataclass(frozen=True)
class CorrelationSpec:
    r: float
    mean_m: float = 0.0
    std_v: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.r <= 1.0:
            raise ValueError(f"r must lie in (0, 1], got {self.r}")
        if not self.std_v > 0:
            raise ValueError(f"std_v must be positive, got {self.std_v}")

    @property
    def slack(self) -> float:
        """sqrt(1 - r^2), exactly 0 at r = 1."""
        return math.sqrt(max(0.0, 1.0 - self.r * self.r))


@dataclass(frozen=True)
class DualVariables:
    lambda1: float
    lambda2: float
    lambda3: float
    degenerate: bool = False
    r_one: bool = False

    def __post_init__(self):
        if not self.lambda3 < 0:
            raise InvariantError(f"lambda3 must be negative, got {self.lambda3}")


@dataclass(frozen=True)
class RobustStats:
    chi2: float
    proxy_mean_pi: float
    h: float
    seen_mass: float = 1.0

    @property
    def degenerate(self) -> bool:
        return self.h < EPS_H


def _check_normalized(occ_ref: OccupancyMeasure, proxy_norm: np.ndarray, support: np.ndarray):
    w = occ_ref.mass[support]
    p = proxy_norm[support]
    mean = float(np.sum(w * p))
    second = float(np.sum(w * p * p))
    if abs(mean) > NORM_TOL or abs(second - 1.0) > NORM_TOL:
        raise NormalizationError(f"proxy is not normalised under the reference: mean={mean:.3g}, second moment={second:.6g}")


def robust_stats(occ_pi: OccupancyMeasure, occ_ref: OccupancyMeasure, proxy_norm, allow_unseen: bool = False, check: bool = True) -> RobustStats:
    """chi^2, E_pi[proxy] and h = chi^2 - E^2 for mu_pi against mu_ref.

    With ``allow_unseen`` the policy may visit pairs outside the reference
    support; only the seen part enters and ``seen_mass`` records its total.
    """
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    if proxy_norm.shape != occ_ref.shape:
        raise ShapeError(f"proxy shape {proxy_norm.shape} does not match occupancy shape {occ_ref.shape}")
    if allow_unseen:
        if occ_pi.shape != occ_ref.shape:
            raise ShapeError(f"occupancy shapes differ: {occ_pi.shape} vs {occ_ref.shape}")
        support = occ_ref.mass > 0
    else:
        support = check_support(occ_pi, occ_ref)
    if check:
        _check_normalized(occ_ref, proxy_norm, support)
    p = occ_pi.mass[support]
    q = occ_ref.mass[support]
    q = q / q.sum()
    y = proxy_norm[support]
    seen = float(p.sum()) if allow_unseen else 1.0
    e = float(np.sum(p * y))
    naive = float(np.sum(p * p / q)) - seen * seen - e * e
    if naive < -1e-10:
        raise InvariantError(f"h = {naive:.3g} < 0 violates Cauchy-Schwarz; inputs are inconsistent")
    # sum p^2/q - m^2 - E^2 rewritten as a sum of squares (equal for a
    # normalised proxy), so h is not swamped by cancellation near the reference
    dev = p - seen * q
    chi2 = float(np.sum(dev * dev / q))
    dev -= e * q * y
    h = float(np.sum(dev * dev / q))
    return RobustStats(chi2, e, h, seen)


def dual_solution(stats: RobustStats, spec: CorrelationSpec, eps_h: float = EPS_H) -> DualVariables:
    v, r, m = spec.std_v, spec.r, stats.seen_mass
    if spec.slack == 0.0:
        # penalty vanishes; the set is the single reward M + V * proxy
        return DualVariables(float("nan"), float("nan"), -math.inf, degenerate=stats.h < eps_h, r_one=True)
    degenerate = stats.h < eps_h
    root = math.sqrt(eps_h if degenerate else stats.h)
    lam3 = -root / (2.0 * v * spec.slack)
    lam2 = m - 2.0 * lam3 * spec.mean_m
    lam1 = v * stats.proxy_mean_pi - 2.0 * r * lam3 * v * v
    return DualVariables(lam1, lam2, lam3, degenerate=degenerate)


def _ratio_table(ratio):
    if isinstance(ratio, LogRatioModel):
        if ratio.direction != "pi_over_ref":
            raise ValueError("the adversarial reward needs a pi_over_ref ratio")
        return ratio.ratio(), ratio.support
    arr = np.asarray(ratio, dtype=np.float64)
    return arr, np.ones(arr.shape, dtype=bool)


def worst_case_reward(ratio, proxy_norm, duals: DualVariables, spec: CorrelationSpec) -> np.ma.MaskedArray:
    """(L - lambda1 * proxy / V - lambda2) / (2 lambda3) on the reference support.

    Off-support pairs are masked: the adversary is unconstrained there.
    """
    if not duals.lambda3 < 0:
        raise InvariantError(f"lambda3 must be negative, got {duals.lambda3}")
    lr, support = _ratio_table(ratio)
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    if proxy_norm.shape != lr.shape:
        raise ShapeError(f"proxy shape {proxy_norm.shape} does not match ratio shape {lr.shape}")
    if duals.r_one:
        values = spec.mean_m + spec.std_v * proxy_norm
    else:
        values = (lr - duals.lambda1 * proxy_norm / spec.std_v - duals.lambda2) / (2.0 * duals.lambda3)
    return np.ma.masked_array(np.where(support, values, 0.0), mask=~support)


def robust_value(stats: RobustStats, spec: CorrelationSpec) -> float:
    """M*m + r*V*E - V*sqrt(1 - r^2)*sqrt(h)."""
    v = spec.std_v
    return spec.mean_m * stats.seen_mass + spec.r * v * stats.proxy_mean_pi - v * spec.slack * math.sqrt(stats.h)


def improvement_lower_bound(stats: RobustStats, spec: CorrelationSpec) -> float:
    """Guaranteed true-reward improvement over the reference (M = 0, V = 1 value)."""
    return robust_value(stats, CorrelationSpec(spec.r, 0.0, 1.0))


@dataclass(frozen=True)
class FeasibilityReport:
    mean_residual: float
    second_moment_residual: float
    correlation_residual: float
    tol: float
    passed: bool

    @property
    def residuals(self):
        return self.mean_residual, self.second_moment_residual, self.correlation_residual

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def feasibility_check(candidate, occ_ref: OccupancyMeasure, proxy_norm, spec: CorrelationSpec, tol: float = 1e-6) -> FeasibilityReport:
    """Residuals of the mean, second-moment and correlation constraints under mu_ref."""
    support = occ_ref.mass > 0
    if np.ma.isMaskedArray(candidate):
        if np.ma.getmaskarray(candidate)[support].any():
            raise ShapeError("candidate reward is masked on part of the reference support")
        candidate = np.ma.getdata(candidate)
    cand = np.asarray(candidate, dtype=np.float64)
    proxy_norm = np.asarray(proxy_norm, dtype=np.float64)
    w = occ_ref.mass[support] / occ_ref.mass[support].sum()
    c = cand[support]
    m, v = spec.mean_m, spec.std_v
    mean_res = abs(float(np.sum(w * c)) - m)
    second_res = abs(float(np.sum(w * c * c)) - (m * m + v * v))
    corr_res = abs(float(np.sum(w * c * proxy_norm[support])) - spec.r * v)
    passed = max(mean_res, second_res, corr_res) < tol
    return FeasibilityReport(mean_res, second_res, corr_res, tol, bool(passed))


def brute_force_inner_min(*args, **kwargs):
    """Sphere-sampling oracle for the inner minimum (see ``robustpo.oracle``)."""
    from .oracle import brute_force_inner_min as impl

    return impl(*args, **kwargs)


__all__ = [
    "CorrelationSpec",
    "DualVariables",
    "RobustStats",
    "FeasibilityReport",
    "robust_stats",
    "dual_solution",
    "worst_case_reward",
    "robust_value",
    "improvement_lower_bound",
    "feasibility_check",
    "brute_force_inner_min",
    "EPS_H",
]
