"""Randomised oracle suite: closed forms against brute force and finite differences.

Every instance is rebuilt from ``(master seed, check name, index)``, so a
failure can be replayed exactly.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .adversary import CorrelationSpec, dual_solution, feasibility_check, robust_stats, robust_value, worst_case_reward
from .errors import DualNonConvergence
from .linear import FeatureMap, compute_Q, linear_dual_stats, linear_inner_value, solve_linear_duals, theta_star, whiten
from .mdp import OccupancyMeasure, SoftmaxPolicy, exact_occupancy, policy_gradient, random_mdp
from .oracle import analytic_inner_min, finite_difference_gradient, sample_feasible_rewards
from .policy_opt import maxmin_objective, maxmin_pseudo_reward, orpo_objective, orpo_pseudo_reward


@dataclass(frozen=True)
class OracleTolerances:
    duality: float = 1e-8
    feasibility: float = 1e-6
    whitening: float = 1e-8
    dominance: float = 1e-8
    gradient_rel: float = 1e-4
    bound: float = 1e-8


@dataclass
class CheckResult:
    name: str
    n_instances: int
    max_error: float
    passed: bool
    failure: dict | None = None
    notes: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.n_instances} instances, max error {self.max_error:.3g}"


def instance_rng(seed: int, check: str, index: int) -> np.random.Generator:
    key = zlib.crc32(check.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, int(index)]))


def random_tabular_instance(rng, min_pairs=3, max_pairs=12):
    """(occ_pi, occ_ref, proxy_norm) on a random support of 3-12 pairs."""
    k = int(rng.integers(min_pairs, max_pairs + 1))
    ref = rng.dirichlet(np.ones(k))
    pi = rng.dirichlet(np.ones(k))
    raw = rng.normal(size=k)
    occ_ref = OccupancyMeasure(ref[None, :])
    proxy = est.normalize_proxy(raw[None, :], est.proxy_moments_exact(occ_ref, raw[None, :]))
    return OccupancyMeasure(pi[None, :]), occ_ref, proxy


def _random_spec(rng):
    return CorrelationSpec(float(rng.uniform(0.05, 0.95)), float(rng.normal()), float(rng.uniform(0.5, 2.0)))


def _relative(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-12, float(np.max(np.abs(b)))))


def _dump(occ_pi=None, occ_ref=None, proxy=None, **extra):
    doc = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in extra.items()}
    if occ_pi is not None:
        doc["mu_pi"] = occ_pi.mass.tolist()
    if occ_ref is not None:
        doc["mu_ref"] = occ_ref.mass.tolist()
    if proxy is not None:
        doc["proxy_norm"] = np.asarray(proxy).tolist()
    return doc


def check_duality(seed, index, tol):
    rng = instance_rng(seed, "duality", index)
    occ_pi, occ_ref, proxy = random_tabular_instance(rng)
    spec = _random_spec(rng)
    stats = robust_stats(occ_pi, occ_ref, proxy)
    closed = robust_value(stats, spec)
    reward = worst_case_reward(est.ratio_exact(occ_pi, occ_ref), proxy, dual_solution(stats, spec), spec)
    primal = float(np.sum(occ_pi.mass * np.ma.getdata(reward)))
    sphere = analytic_inner_min(occ_pi.mass, occ_ref.mass, proxy, spec.r, spec.mean_m, spec.std_v)
    err = max(abs(primal - closed), abs(sphere - closed))
    return err, _dump(occ_pi, occ_ref, proxy, r=spec.r, mean_m=spec.mean_m, std_v=spec.std_v)


def check_feasibility(seed, index, tol):
    rng = instance_rng(seed, "feasibility", index)
    occ_pi, occ_ref, proxy = random_tabular_instance(rng)
    spec = _random_spec(rng)
    stats = robust_stats(occ_pi, occ_ref, proxy)
    reward = worst_case_reward(est.ratio_exact(occ_pi, occ_ref), proxy, dual_solution(stats, spec), spec)
    report = feasibility_check(reward, occ_ref, proxy, spec, tol)
    return max(report.residuals), _dump(occ_pi, occ_ref, proxy, r=spec.r, mean_m=spec.mean_m, std_v=spec.std_v)


def _random_features(rng, occ_ref, k=3):
    return FeatureMap(rng.normal(size=occ_ref.shape + (k,)))


def check_whitening(seed, index, tol):
    rng = instance_rng(seed, "whitening", index)
    _, occ_ref, _ = random_tabular_instance(rng, 4, 12)
    feats = _random_features(rng, occ_ref)
    q = compute_Q(occ_ref, feats)
    wf = whiten(q, feats)
    err = float(np.max(np.abs(wf.transform @ q @ wf.transform.T - np.eye(feats.dim))))
    return err, _dump(None, occ_ref, None, features=feats.values)


def check_dominance(seed, index, tol):
    """Linear worst case >= general worst case (restricting the adversary can only help)."""
    rng = instance_rng(seed, "dominance", index)
    occ_pi, occ_ref, proxy = random_tabular_instance(rng, 4, 12)
    r = float(rng.uniform(0.1, 0.9))
    feats = _random_features(rng, occ_ref)
    w = occ_ref.mass / occ_ref.mass.sum()
    centred = FeatureMap(feats.values - np.einsum("sa,sak->k", w, feats.values))
    wf = whiten(compute_Q(occ_ref, centred), centred)
    lstats = linear_dual_stats(occ_pi, occ_ref, proxy, wf)
    try:
        duals = solve_linear_duals(lstats, CorrelationSpec(r))
    except DualNonConvergence:
        return 0.0, None  # no feasible linear adversary at this r: nothing to compare
    lin = linear_inner_value(theta_star(duals, lstats, wf), lstats)
    general = robust_value(robust_stats(occ_pi, occ_ref, proxy), CorrelationSpec(r))
    return max(0.0, general - lin), _dump(occ_pi, occ_ref, proxy, r=r, features=feats.values)


def _small_mdp(rng):
    n_s, n_a = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    mdp = random_mdp(n_s, n_a, float(rng.uniform(0.5, 0.95)), rng)
    ref = SoftmaxPolicy(rng.normal(size=(n_s, n_a)))
    pol = SoftmaxPolicy(rng.normal(size=(n_s, n_a)))
    occ_ref = exact_occupancy(mdp, ref)
    raw = rng.normal(size=(n_s, n_a))
    proxy = est.normalize_proxy(raw, est.proxy_moments_exact(occ_ref, raw))
    return mdp, pol, occ_ref, proxy


def check_gradients(seed, index, tol):
    rng = instance_rng(seed, "gradients", index)
    mdp, pol, occ_ref, proxy = _small_mdp(rng)
    r = float(rng.uniform(0.1, 0.9))
    lam = float(rng.uniform(0.1, 1.0))

    def mm(z):
        return maxmin_objective(exact_occupancy(mdp, SoftmaxPolicy(z)), occ_ref, proxy, r)

    def orpo(z):
        return orpo_objective(exact_occupancy(mdp, SoftmaxPolicy(z)), occ_ref, proxy, lam)

    occ = exact_occupancy(mdp, pol)
    ratio = est.ratio_exact(occ, occ_ref)
    stats = robust_stats(occ, occ_ref, proxy)
    g_mm = r * policy_gradient(mdp, pol, maxmin_pseudo_reward(ratio, proxy, stats, r))
    g_orpo = policy_gradient(mdp, pol, orpo_pseudo_reward(ratio, proxy, est.chi_squared(occ, occ_ref), lam))
    err = max(
        _relative(g_mm, finite_difference_gradient(mm, pol.logits, 1e-6)),
        _relative(g_orpo, finite_difference_gradient(orpo, pol.logits, 1e-6)),
    )
    return err, {"seed": seed, "index": index, "r": r, "lambda": lam, "logits": pol.logits.tolist()}


def check_bound(seed, index, tol):
    rng = instance_rng(seed, "bound", index)
    mdp, pol, occ_ref, proxy = _small_mdp(rng)
    spec = CorrelationSpec(float(rng.uniform(0.1, 0.9)))
    occ = exact_occupancy(mdp, pol)
    bound = robust_value(robust_stats(occ, occ_ref, proxy), spec)
    rewards = sample_feasible_rewards(occ_ref.mass, proxy, spec.r, 200, rng)
    diff = np.einsum("nsa,sa->n", rewards, occ.mass - occ_ref.mass)
    return max(0.0, float(bound - diff.min())), _dump(occ, occ_ref, proxy, r=spec.r)


CHECKS = {
    "strong-duality": (check_duality, "duality"),
    "feasibility": (check_feasibility, "feasibility"),
    "whitening": (check_whitening, "whitening"),
    "linear-dominance": (check_dominance, "dominance"),
    "gradients": (check_gradients, "gradient_rel"),
    "improvement-bound": (check_bound, "bound"),
}


def run_check(name, seed=0, n_instances=50, tolerances=OracleTolerances()) -> CheckResult:
    fn, tol_key = CHECKS[name]
    tol = getattr(tolerances, tol_key)
    worst, failure = 0.0, None
    for i in range(n_instances):
        err, doc = fn(seed, i, tol)
        worst = max(worst, err)
        if err > tol and failure is None:
            failure = {"check": name, "seed": seed, "index": i, "error": err, "tol": tol, "instance": doc}
    return CheckResult(name, n_instances, worst, failure is None, failure)


def run_suite(seed=0, n_instances=50, tolerances=OracleTolerances(), names=None) -> list:
    return [run_check(n, seed, n_instances, tolerances) for n in (names or CHECKS)]


def replay(failure: dict, tolerances=OracleTolerances()) -> CheckResult:
    """Rebuild and rerun the single instance recorded in a failure document."""
    name = failure["check"]
    fn, tol_key = CHECKS[name]
    tol = getattr(tolerances, tol_key)
    err, doc = fn(failure["seed"], failure["index"], tol)
    fail = None if err <= tol else {**failure, "error": err, "instance": doc}
    return CheckResult(name, 1, err, fail is None, fail)


def failure_json(result: CheckResult) -> str:
    return json.dumps(result.failure, sort_keys=True, indent=1)


__all__ = [
    "OracleTolerances",
    "CheckResult",
    "CHECKS",
    "instance_rng",
    "random_tabular_instance",
    "run_check",
    "run_suite",
    "replay",
    "failure_json",
]
