"""Hot loops for trajectory sampling and discounted accumulation.

Every kernel has a numba ``@njit`` implementation and a pure-numpy
implementation. Set ``ROBUSTPO_DISABLE_NUMBA=1`` to force the numpy path
(numba is also skipped when it cannot be imported). Both paths consume the
same pre-drawn uniforms and use the same comparison rule for inverse-CDF
sampling, so their outputs are bit-identical.
"""

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("ROBUSTPO_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


ENABLED = _HAVE_NUMBA and not _env_disabled()


def backend():
    return "numba" if ENABLED else "numpy"


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"`` at runtime (tests, benchmarks)."""
    global ENABLED
    if name == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba is not importable")
        ENABLED = True
    elif name == "numpy":
        ENABLED = False
    else:
        raise ValueError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _inverse_cdf_np(cdf_rows, u):
    # index = #{k : cdf[k] <= u}, clamped for rows whose last entry rounds below 1
    idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _sample_paths_np(init_cdf, policy_cdf, trans_cdf, u_init, u_steps):
    n, horizon = u_steps.shape[0], u_steps.shape[1]
    n_states = init_cdf.shape[0]
    n_actions = policy_cdf.shape[1]
    states = np.empty((n, horizon), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    s = np.minimum((init_cdf[None, :] <= u_init[:, None]).sum(axis=1), n_states - 1)
    flat_trans = trans_cdf.reshape(-1, n_states)
    for t in range(horizon):
        a = _inverse_cdf_np(policy_cdf[s], u_steps[:, t, 0])
        states[:, t] = s
        actions[:, t] = a
        s = _inverse_cdf_np(flat_trans[s * n_actions + a], u_steps[:, t, 1])
    return states, actions


def discount_powers(discount, horizon):
    """gamma**t for t < horizon by repeated multiplication (matches the njit loop)."""
    steps = np.full(horizon, float(discount))
    steps[0] = 1.0
    return np.cumprod(steps)


def _discounted_counts_np(states, actions, n_states, n_actions, powers):
    weights = np.broadcast_to(powers, states.shape)
    flat = states * n_actions + actions
    counts = np.bincount(flat.ravel(), weights=weights.ravel(), minlength=n_states * n_actions)
    return counts.reshape(n_states, n_actions)


def _discounted_returns_np(states, actions, table, powers):
    # sequential summation so the result matches the njit accumulator bit for bit
    return np.cumsum(table[states, actions] * powers, axis=1)[:, -1]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _inverse_cdf_nb(row, u):
        idx = 0
        for k in range(row.shape[0]):
            if row[k] <= u:
                idx += 1
        if idx > row.shape[0] - 1:
            idx = row.shape[0] - 1
        return idx

    @numba.njit(cache=True, nogil=True)
    def _sample_paths_nb(init_cdf, policy_cdf, trans_cdf, u_init, u_steps):
        n = u_steps.shape[0]
        horizon = u_steps.shape[1]
        states = np.empty((n, horizon), dtype=np.int64)
        actions = np.empty((n, horizon), dtype=np.int64)
        for i in range(n):
            s = _inverse_cdf_nb(init_cdf, u_init[i])
            for t in range(horizon):
                a = _inverse_cdf_nb(policy_cdf[s], u_steps[i, t, 0])
                states[i, t] = s
                actions[i, t] = a
                s = _inverse_cdf_nb(trans_cdf[s, a], u_steps[i, t, 1])
        return states, actions

    @numba.njit(cache=True, nogil=True)
    def _discounted_counts_nb(states, actions, n_states, n_actions, powers):
        out = np.zeros((n_states, n_actions))
        n, horizon = states.shape
        for i in range(n):
            for t in range(horizon):
                out[states[i, t], actions[i, t]] += powers[t]
        return out

    @numba.njit(cache=True, nogil=True)
    def _discounted_returns_nb(states, actions, table, powers):
        n, horizon = states.shape
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for t in range(horizon):
                acc += powers[t] * table[states[i, t], actions[i, t]]
            out[i] = acc
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def sample_paths(init_cdf, policy_cdf, trans_cdf, u_init, u_steps):
    """Roll out ``len(u_init)`` trajectories by inverse-CDF sampling.

    ``u_steps[i, t, 0]`` drives the action draw and ``u_steps[i, t, 1]`` the
    transition draw at step ``t`` of trajectory ``i``.
    """
    if ENABLED:
        return _sample_paths_nb(init_cdf, policy_cdf, trans_cdf, u_init, u_steps)
    return _sample_paths_np(init_cdf, policy_cdf, trans_cdf, u_init, u_steps)


def discounted_counts(states, actions, n_states, n_actions, discount):
    """Sum of gamma**t indicators per (s, a) over all trajectories (no normalisation)."""
    powers = discount_powers(discount, states.shape[1])
    if ENABLED:
        return _discounted_counts_nb(states, actions, n_states, n_actions, powers)
    return _discounted_counts_np(states, actions, n_states, n_actions, powers)


def discounted_returns(states, actions, table, discount):
    """Per-trajectory discounted sum of ``table[s_t, a_t]``."""
    table = np.ascontiguousarray(table, dtype=np.float64)
    powers = discount_powers(discount, states.shape[1])
    if ENABLED:
        return _discounted_returns_nb(states, actions, table, powers)
    return _discounted_returns_np(states, actions, table, powers)
