"""Independent brute-force oracles.

Nothing here imports the closed-form adversaries; the oracles work from the
geometry of the feasible set directly. Under the mu_ref inner product every
feasible reward is

    R = M * 1 + r * V * proxy + rho * u,   rho = V * sqrt(1 - r^2),

with u a unit vector orthogonal to both 1 and proxy. Scaling coordinates by
sqrt(mu_ref) turns that inner product into the Euclidean one, so the
orthogonal complement comes straight from an SVD.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SupportError


class _SphereFrame:
    """Euclidean frame of the feasible sphere for one (mu_ref, proxy) pair."""

    def __init__(self, ref_mass, proxy_norm, r, mean_m=0.0, std_v=1.0):
        ref_mass = np.asarray(ref_mass, dtype=np.float64)
        self.shape = ref_mass.shape
        self.support = ref_mass > 0
        k = int(self.support.sum())
        if k < 3:
            raise SupportError(f"reference support has {k} pair(s); the feasible sphere needs at least 3", [])
        w = ref_mass[self.support] / ref_mass[self.support].sum()
        self.sqrt_w = np.sqrt(w)
        p = np.asarray(proxy_norm, dtype=np.float64)[self.support]
        basis = np.stack([self.sqrt_w, self.sqrt_w * p], axis=1)
        u, _, _ = np.linalg.svd(basis, full_matrices=True)
        self.null = u[:, 2:]  # (k, k-2), orthonormal, orthogonal to 1 and proxy
        self.centre = mean_m + r * std_v * p
        self.rho = std_v * math.sqrt(max(0.0, 1.0 - r * r))

    def rewards_from_directions(self, z):
        """Map raw Gaussian draws (n, k-2) to feasible rewards on the support (n, k)."""
        z = np.atleast_2d(z)
        unit = z / np.linalg.norm(z, axis=1, keepdims=True)
        return self.centre[None, :] + self.rho * (unit @ self.null.T) / self.sqrt_w[None, :]

    def embed(self, values):
        """Scatter support values (n, k) into full (n, S, A) tables, zero elsewhere."""
        out = np.zeros((values.shape[0],) + self.shape)
        out[:, self.support] = values
        return out


def analytic_inner_min(pi_mass, ref_mass, proxy_norm, r, mean_m=0.0, std_v=1.0) -> float:
    """Exact minimum of <mu_pi, R> over the feasible sphere (seen pairs only)."""
    f = _SphereFrame(ref_mass, proxy_norm, r, mean_m, std_v)
    c = np.asarray(pi_mass, dtype=np.float64)[f.support] / f.sqrt_w
    base = float(np.sum(np.asarray(pi_mass)[f.support] * f.centre))
    return base - f.rho * float(np.linalg.norm(f.null.T @ c))


def sample_feasible_rewards(ref_mass, proxy_norm, r, n, rng, mean_m=0.0, std_v=1.0) -> np.ndarray:
    """``n`` rewards drawn uniformly from the feasible sphere, as (n, S, A) tables."""
    f = _SphereFrame(ref_mass, proxy_norm, r, mean_m, std_v)
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((n, f.null.shape[1]))
    return f.embed(f.rewards_from_directions(z))


def brute_force_inner_min(occ_pi, occ_ref, proxy_norm, spec, n_samples=0, rng=None, chunk=20000) -> float:
    """Minimum of <mu_pi, R> over the correlation-constrained set.

    With ``n_samples == 0`` returns the analytic projection value. Otherwise
    returns the minimum over ``n_samples`` uniform sphere points, which can
    only overestimate the true minimum.
    """
    pi_mass = getattr(occ_pi, "mass", occ_pi)
    ref_mass = getattr(occ_ref, "mass", occ_ref)
    if n_samples <= 0:
        return analytic_inner_min(pi_mass, ref_mass, proxy_norm, spec.r, spec.mean_m, spec.std_v)
    f = _SphereFrame(ref_mass, proxy_norm, spec.r, spec.mean_m, spec.std_v)
    rng = np.random.default_rng(rng)
    mu = np.asarray(pi_mass, dtype=np.float64)[f.support]
    best = math.inf
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        rewards = f.rewards_from_directions(rng.standard_normal((m, f.null.shape[1])))
        best = min(best, float((rewards @ mu).min()))
    return best


def brute_force_linear_min(pi_feat_mean, ref_feat_mean, ref_proxy_feat, r, grid=200, tol=1e-3):
    """Grid search of min theta . v over the nonnegative unit sphere cap.

    Works in whitened coordinates (dim 1, 2 or 3), keeping points that meet
    the mean and correlation constraints within ``tol``. Returns +inf when
    no grid point qualifies.
    """
    v = np.asarray(pi_feat_mean, dtype=np.float64)
    c = np.asarray(ref_feat_mean, dtype=np.float64)
    d = np.asarray(ref_proxy_feat, dtype=np.float64)
    k = v.size
    if k == 1:
        pts = np.array([[1.0]])
    elif k == 2:
        a = np.linspace(0.0, math.pi / 2, grid * 20)
        pts = np.stack([np.cos(a), np.sin(a)], axis=1)
    elif k == 3:
        a, b = np.meshgrid(np.linspace(0.0, math.pi / 2, grid * 4), np.linspace(0.0, math.pi / 2, grid * 4))
        a, b = a.ravel(), b.ravel()
        pts = np.stack([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), np.cos(a)], axis=1)
    else:
        raise ValueError("grid oracle supports at most 3 features")
    ok = (np.abs(pts @ c) <= tol) & (np.abs(pts @ d - r) <= tol)
    if not ok.any():
        return math.inf
    return float((pts[ok] @ v).min())


def finite_difference_gradient(f, x, step=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


__all__ = [
    "analytic_inner_min",
    "sample_feasible_rewards",
    "brute_force_inner_min",
    "brute_force_linear_min",
    "finite_difference_gradient",
]
