"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trajectories 20000] [--repeat 3]

Both backends see the same uniforms, so the script also confirms the outputs
are identical before reporting timings.
"""

import argparse
import time

import numpy as np

from robustpo import _kernels
from robustpo.envs import make_tomato
from robustpo.mdp import sample_trajectories


def _best_of(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    bundle = make_tomato()
    mdp, pol = bundle.mdp, bundle.reference
    table = np.random.default_rng(0).normal(size=mdp.shape)

    def rollout():
        return sample_trajectories(mdp, pol, args.trajectories, rng=0)

    results = {}
    for name in ("numpy", "numba"):
        _kernels.set_backend(name)
        rollout()  # compile / warm caches
        batch, t_roll = _best_of(rollout, args.repeat)
        counts, t_cnt = _best_of(lambda: _kernels.discounted_counts(batch.states, batch.actions, *mdp.shape, mdp.discount), args.repeat)
        rets, t_ret = _best_of(lambda: _kernels.discounted_returns(batch.states, batch.actions, table, mdp.discount), args.repeat)
        results[name] = (batch, counts, rets, (t_roll, t_cnt, t_ret))

    a, b = results["numpy"], results["numba"]
    same = np.array_equal(a[0].states, b[0].states) and np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
    print(f"{args.trajectories} trajectories, horizon {a[0].states.shape[1]}, outputs identical: {same}")
    print(f"{'kernel':<20}{'numpy s':>10}{'numba s':>10}{'speedup':>10}")
    for i, label in enumerate(("sample_paths", "discounted_counts", "discounted_returns")):
        tn, tb = a[3][i], b[3][i]
        print(f"{label:<20}{tn:>10.4f}{tb:>10.4f}{tn / tb:>9.1f}x")


if __name__ == "__main__":
    main()
