"""Derive expected values for the unit tests without touching robustpo.

Run ``python tests/oracles/derive.py`` to regenerate ``frozen.json``. Every
value here comes from hand sums in exact rational arithmetic, a geometric
brute force, or a closed form worked out independently of the package code.
"""

import json
import math
from fractions import Fraction as F
from pathlib import Path

import numpy as np

OUT = Path(__file__).with_name("frozen.json")


def cycle_occupancy():
    # two states, s0 -> s1 -> s0 whatever the action, start s0, uniform over 2 actions, g = 1/2
    g = F(1, 2)
    d = [F(0), F(0)]
    for t in range(200):
        d[t % 2] += (1 - g) * g**t
    # tail beyond 200 steps is below 2^-200; round to the exact geometric limit
    d = [F(2, 3), F(1, 3)] if abs(float(d[0]) - 2 / 3) < 1e-15 else d
    return [[float(x / 2), float(x / 2)] for x in d]


def empirical_two_step():
    g = F(1, 2)
    return {"A_a": float((1 - g) * g**0), "B_b": float((1 - g) * g**1)}


def two_point_moments():
    w, r = [F(1, 2), F(1, 2)], [F(2), F(4)]
    mean = sum(a * b for a, b in zip(w, r))
    var = sum(a * (b - mean) ** 2 for a, b in zip(w, r))
    std = math.sqrt(var)
    return {"mean": float(mean), "std": std, "normalized": [float((x - mean) / F(std).limit_denominator()) for x in r]}


def chi2_and_ratio():
    ref, pi = [F(1, 2), F(1, 2)], [F(4, 5), F(1, 5)]
    chi2 = sum(p * p / q for p, q in zip(pi, ref)) - 1
    return {"chi2": float(chi2), "ratio": [float(p / q) for p, q in zip(pi, ref)]}


def robust_stats_examples():
    out = {}
    ref, pi, y = [F(1, 2)] * 2, [F(4, 5), F(1, 5)], [F(1), F(-1)]
    chi2 = sum(p * p / q for p, q in zip(pi, ref)) - 1
    e = sum(p * v for p, v in zip(pi, y))
    out["two_point"] = [float(chi2), float(e), float(chi2 - e * e)]
    ref = [F(1, 4)] * 4
    pi = [F(4, 10), F(3, 10), F(2, 10), F(1, 10)]
    y = [F(1), F(1), F(-1), F(-1)]
    chi2 = sum(p * p / q for p, q in zip(pi, ref)) - 1
    e = sum(p * v for p, v in zip(pi, y))
    out["four_point"] = [float(chi2), float(e), float(chi2 - e * e)]
    return out


def four_point_instance():
    """mu_ref uniform on 4 pairs, proxy (1,1,-1,-1), mu_pi with E=0.6, chi2=0.72.

    mu_pi = (a, 0.8-a, 0.15, 0.05) with a the larger root of
    a^2 + (0.8-a)^2 = 0.405.
    """
    a = (1.6 + math.sqrt(1.6**2 - 8 * 0.235)) / 4
    return np.array([a, 0.8 - a, 0.15, 0.05]), np.full(4, 0.25), np.array([1.0, 1.0, -1.0, -1.0])


def sphere_minimum(pi, ref, y, r, m=0.0, v=1.0, n_grid=400_000, seed=0):
    """Brute-force min of <pi, R> over R = m + r v y + v sqrt(1-r^2) u/sqrt(ref).

    u runs over unit vectors orthogonal (Euclidean) to sqrt(ref) and
    sqrt(ref)*y; we sample them densely and then refine by projected descent.
    """
    s = np.sqrt(ref)
    basis = np.stack([s, s * y], axis=1)
    q, _ = np.linalg.qr(np.concatenate([basis, np.eye(len(ref))], axis=1))
    null = q[:, 2:]
    c = null.T @ (pi / s)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_grid, null.shape[1]))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    best = z[np.argmin(z @ c)]
    for _ in range(2000):  # minimise c.u on the sphere by projected gradient
        best = best - 0.1 * c
        best /= np.linalg.norm(best)
    rho = v * math.sqrt(1 - r * r)
    reward = m + r * v * y + rho * (null @ best) / s
    return float(pi @ reward), reward


def dual_example():
    pi, ref, y = four_point_instance()
    r = 0.5
    value, reward = sphere_minimum(pi, ref, y, r)
    # stationarity of the Lagrangian: L = 2 l3 R* + l1 y + l2 (exactly linear on the support)
    L = pi / ref
    design = np.stack([2 * reward, y, np.ones_like(y)], axis=1)
    l3, l1, l2 = np.linalg.lstsq(design, L, rcond=None)[0]
    _, reward_v2 = sphere_minimum(pi, ref, y, r, 0.0, 2.0)
    return {
        "mu_pi": pi.tolist(),
        "value": value,
        "lambda1": float(l1),
        "lambda2": float(l2),
        "lambda3": float(l3),
        "reward": reward.tolist(),
        "second_moment_v2": float(ref @ reward_v2**2),
    }


def indicator_q():
    # two pairs with weight 1/2 each, features e1 and e2
    return [[0.5, 0.0], [0.0, 0.5]]


def whiten_diag():
    return [[1 / math.sqrt(4.0), 0.0], [0.0, 1 / math.sqrt(0.25)]]


def separable_theta(q, lam3, grid=200_001):
    """argmin_{theta >= 0} q theta - lam3 theta^2 per coordinate, by grid search."""
    t = np.linspace(0.0, 5.0, grid)
    out = []
    for qj in q:
        out.append(float(t[np.argmin(qj * t - lam3 * t * t)]))
    return out


def linear_gradient_example():
    q, lam3, d, c, r = [0.4, -0.2], -0.5, [1.0, 0.0], [0.0, 1.0], 0.3
    th = separable_theta(q, lam3)
    grads = [r - float(np.dot(d, th)), -float(np.dot(c, th)), 1 - float(np.dot(th, th))]
    return {"theta": th, "gradients": grads}


def tomato_pinned():
    # agent held on the sprinkler, both tomatoes wet at t=0 and never rewatered
    g, p = 0.95, 0.15
    true = 2 * (1 - g) / (1 - g * (1 - p))
    return {"true": true, "proxy": true + 2.0}


def main():
    doc = {
        "cycle_occupancy": cycle_occupancy(),
        "return_dot": 0.8 * 1 + 0.2 * -1,
        "empirical_two_step": empirical_two_step(),
        "two_point_moments": two_point_moments(),
        "chi2_ratio": chi2_and_ratio(),
        "robust_stats": robust_stats_examples(),
        "dual_example": dual_example(),
        "indicator_q": indicator_q(),
        "whiten_diag": whiten_diag(),
        "linear_gradient_example": linear_gradient_example(),
        "tomato_pinned": tomato_pinned(),
        "tomato_state_count": 9 * 2**2,
    }
    OUT.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(json.dumps(doc, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
