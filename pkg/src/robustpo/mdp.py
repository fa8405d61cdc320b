"""Finite MDPs, softmax policies and occupancy measures.

Arrays indexed by state-action pairs are kept as ``(n_states, n_actions)``
matrices throughout; reward tables are plain float arrays of that shape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import NumericalError, ShapeError

log = logging.getLogger(__name__)

ROW_TOL = 1e-10


@dataclass(frozen=True)
class TabularMdp:
    transitions: np.ndarray  # (S, A, S)
    initial_dist: np.ndarray  # (S,)
    discount: float

    def __post_init__(self):
        p = np.asarray(self.transitions, dtype=np.float64)
        mu0 = np.asarray(self.initial_dist, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ShapeError(f"transitions must have shape (S, A, S), got {p.shape}")
        if mu0.shape != (p.shape[0],):
            raise ShapeError(f"initial_dist must have shape ({p.shape[0]},), got {mu0.shape}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if (p < 0).any() or np.abs(p.sum(axis=2) - 1.0).max() > ROW_TOL:
            raise ValueError("every transition row must be a probability vector")
        if (mu0 < 0).any() or abs(mu0.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_dist must be a probability vector")
        p.setflags(write=False)
        mu0.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "initial_dist", mu0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    def default_horizon(self, eps: float = 1e-6) -> int:
        """Smallest horizon with discount**horizon < eps."""
        if self.discount == 0.0:
            return 1
        return max(1, int(math.ceil(math.log(eps) / math.log(self.discount))) + 1)


@dataclass(frozen=True)
class SoftmaxPolicy:
    logits: np.ndarray  # (S, A)

    def __post_init__(self):
        z = np.array(self.logits, dtype=np.float64)
        if z.ndim != 2:
            raise ShapeError(f"logits must be 2-D, got shape {z.shape}")
        if not np.isfinite(z).all():
            raise NumericalError("policy logits must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "logits", z)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs, floor=1e-300):
        return cls(np.log(np.maximum(np.asarray(probs, dtype=np.float64), floor)))

    @property
    def shape(self):
        return self.logits.shape

    @property
    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class OccupancyMeasure:
    """Discounted state-action visitation, normalised by (1 - discount).

    ``deficit`` is the mass lost to horizon truncation (0 for exact occupancies).
    """

    mass: np.ndarray
    deficit: float = 0.0
    exact: bool = True

    def __post_init__(self):
        m = np.array(self.mass, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"occupancy mass must be 2-D, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def shape(self):
        return self.mass.shape

    @property
    def support(self) -> np.ndarray:
        return self.mass > 0


@dataclass(frozen=True)
class TrajectoryBatch:
    states: np.ndarray  # (N, H) int
    actions: np.ndarray  # (N, H) int
    seed: object = None
    n_states: int = 0
    n_actions: int = 0

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]


def _check_policy(mdp, policy):
    if policy.shape != mdp.shape:
        raise ShapeError(f"policy shape {policy.shape} does not match MDP shape {mdp.shape}")


def state_transition_matrix(mdp: TabularMdp, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", pi, mdp.transitions)


def state_distribution(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """Normalised discounted state distribution d(s) = (1-g) sum_t g^t P(s_t = s)."""
    _check_policy(mdp, policy)
    p_pi = state_transition_matrix(mdp, policy.probs)
    a = np.eye(mdp.n_states) - mdp.discount * p_pi.T
    try:
        d = np.linalg.solve(a, (1.0 - mdp.discount) * mdp.initial_dist)
    except np.linalg.LinAlgError as exc:  # unreachable for discount < 1
        raise NumericalError(f"occupancy flow system is singular: {exc}") from exc
    if not np.isfinite(d).all():
        raise NumericalError("occupancy flow system produced non-finite values")
    return np.maximum(d, 0.0)


def exact_occupancy(mdp: TabularMdp, policy: SoftmaxPolicy) -> OccupancyMeasure:
    d = state_distribution(mdp, policy)
    return OccupancyMeasure(d[:, None] * policy.probs)


def return_value(occ: OccupancyMeasure, reward) -> float:
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != occ.shape:
        raise ShapeError(f"reward shape {reward.shape} does not match occupancy shape {occ.shape}")
    return float(np.sum(occ.mass * reward))


def q_values(mdp: TabularMdp, policy: SoftmaxPolicy, reward) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalised action values Q(s, a) and state values V(s) for ``reward``."""
    _check_policy(mdp, policy)
    reward = np.asarray(reward, dtype=np.float64)
    if reward.shape != mdp.shape:
        raise ShapeError(f"reward shape {reward.shape} does not match MDP shape {mdp.shape}")
    pi = policy.probs
    p_pi = state_transition_matrix(mdp, pi)
    r_pi = (pi * reward).sum(axis=1)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)
    q = reward + mdp.discount * mdp.transitions @ v
    return q, v


def policy_gradient(mdp: TabularMdp, policy: SoftmaxPolicy, reward) -> np.ndarray:
    """Exact gradient of <mu_pi, reward> with respect to the softmax logits.

    d/dz(s,b) = d(s) * pi(b|s) * (Q(s,b) - V(s)), with d the normalised
    discounted state distribution and ``reward`` held fixed.
    """
    q, v = q_values(mdp, policy, reward)
    d = state_distribution(mdp, policy)
    grad = d[:, None] * policy.probs * (q - v[:, None])
    if not np.isfinite(grad).all():
        raise NumericalError("policy gradient is not finite")
    return grad


def occupancy_jacobian(mdp: TabularMdp, policy: SoftmaxPolicy) -> np.ndarray:
    """d mu(s, a) / d logits(s', b) as an (S*A, S*A) matrix (row: pair, column: logit)."""
    _check_policy(mdp, policy)
    n_s, n_a = mdp.shape
    pi = policy.probs
    p_pi = state_transition_matrix(mdp, pi)
    d = state_distribution(mdp, policy)
    # d pi(a|s) / d z(s, b) = pi(a|s) (1{a=b} - pi(b|s))
    dpi = pi[:, :, None] * (np.eye(n_a)[None, :, :] - pi[:, None, :])  # (s, a, b)
    # d d / d z(s', b) = g M^-1 [d(s') pi(b|s') (P(s', b, .) - P_pi(s', .))]
    rhs = (d[:, None, None] * pi[:, :, None] * (mdp.transitions - p_pi[:, None, :])).reshape(n_s * n_a, n_s).T
    dd = mdp.discount * np.linalg.solve(np.eye(n_s) - mdp.discount * p_pi.T, rhs)  # (S, S*A)
    jac = (dd[:, None, :] * pi[:, :, None]).reshape(n_s * n_a, n_s * n_a)
    local = np.zeros((n_s, n_a, n_s, n_a))
    idx = np.arange(n_s)
    local[idx, :, idx, :] = d[:, None, None] * dpi
    return jac + local.reshape(n_s * n_a, n_s * n_a)


def sample_trajectories(
    mdp: TabularMdp,
    policy: SoftmaxPolicy,
    n: int,
    horizon: int | None = None,
    rng: np.random.Generator | int | None = None,
    chunk: int = 8192,
) -> TrajectoryBatch:
    """Sample ``n`` trajectories of length ``horizon``.

    ``rng`` may be an integer seed or a ``numpy.random.Generator``; the seed
    (or the generator's seed sequence entropy) is recorded on the batch.
    """
    _check_policy(mdp, policy)
    if n < 1:
        raise ValueError("n must be >= 1")
    if horizon is None:
        horizon = mdp.default_horizon()
        log.debug("truncation deficit %.3g at horizon %d", mdp.discount**horizon, horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    seed = rng
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    else:
        seed = _generator_identity(rng)

    init_cdf = np.cumsum(mdp.initial_dist)
    policy_cdf = np.ascontiguousarray(np.cumsum(policy.probs, axis=1))
    trans_cdf = np.ascontiguousarray(np.cumsum(mdp.transitions, axis=2))

    states = np.empty((n, horizon), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        u_init = rng.random(stop - start)
        u_steps = rng.random((stop - start, horizon, 2))
        s, a = _kernels.sample_paths(init_cdf, policy_cdf, trans_cdf, u_init, u_steps)
        states[start:stop] = s
        actions[start:stop] = a
    return TrajectoryBatch(states, actions, seed=seed, n_states=mdp.n_states, n_actions=mdp.n_actions)


def _generator_identity(rng):
    seq = getattr(rng.bit_generator, "seed_seq", None) or getattr(rng.bit_generator, "_seed_seq", None)
    if seq is None:
        return id(rng)
    return (seq.entropy, tuple(seq.spawn_key))


def truncation_deficit(discount: float, horizon: int) -> float:
    return float(discount) ** horizon


def random_mdp(n_states, n_actions, discount, rng, concentration=1.0) -> TabularMdp:
    """Dense random MDP with Dirichlet transition rows (test and oracle substrate)."""
    rng = np.random.default_rng(rng)
    p = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    mu0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(p, mu0, discount)


__all__ = [
    "TabularMdp",
    "SoftmaxPolicy",
    "OccupancyMeasure",
    "TrajectoryBatch",
    "exact_occupancy",
    "state_distribution",
    "return_value",
    "q_values",
    "policy_gradient",
    "occupancy_jacobian",
    "sample_trajectories",
    "random_mdp",
    "truncation_deficit",
]
