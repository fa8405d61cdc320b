import json

import numpy as np
import pytest

from robustpo.envs import ACTIONS, TomatoConfig, make_chain, make_env, make_tomato, tomato_features, tomato_reachable, weighted_correlation
from robustpo.errors import EnvironmentSizeError, FeatureMismatchError
from robustpo.linear import EIG_FLOOR, compute_Q
from robustpo.mdp import SoftmaxPolicy, exact_occupancy, return_value


def test_default_tomato_size(tomato, frozen):
    assert tomato.mdp.n_states == frozen["tomato_state_count"]
    assert tomato.mdp.n_actions == len(ACTIONS) == 5


def test_reference_has_full_support(tomato):
    assert (tomato.reference.probs > 0).all()


def test_zero_bonus_removes_hack():
    b = make_tomato(TomatoConfig(bonus=0.0))
    np.testing.assert_array_equal(b.proxy_raw, b.true_raw)


def test_pinned_at_sprinkler(frozen):
    cfg = TomatoConfig(start=(0, 2), start_wet=True)
    b = make_tomato(cfg)
    stay = np.zeros(b.mdp.shape)
    stay[:, ACTIONS.index("stay")] = 1.0
    o = exact_occupancy(b.mdp, SoftmaxPolicy.from_probs(stay))
    assert return_value(o, b.true_raw) == pytest.approx(frozen["tomato_pinned"]["true"], abs=1e-12)
    assert return_value(o, b.proxy_raw) == pytest.approx(frozen["tomato_pinned"]["proxy"], abs=1e-12)


def test_true_reward_lies_in_feature_span(tomato):
    np.testing.assert_array_equal(tomato.features.values[..., 0], tomato.true_raw)
    assert tomato_features(tomato) is tomato.features


def test_feature_q_nonsingular(tomato):
    q = compute_Q(exact_occupancy(tomato.mdp, tomato.reference), tomato.features)
    assert np.linalg.eigvalsh(q).min() > EIG_FLOOR


def test_replace_mode_fails_feature_check():
    b = make_tomato(TomatoConfig(sprinkler_mode="replace"))
    with pytest.raises(FeatureMismatchError):
        tomato_features(b)


def test_size_cap():
    with pytest.raises(EnvironmentSizeError):
        make_tomato(TomatoConfig(max_pairs=100))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"sprinkler": (0, 0)},
        {"dry_prob": 0.0},
        {"dry_prob": 1.0},
        {"exploration": 0.0},
        {"tomatoes": ((0, 0), (0, 0))},
        {"start": (5, 5)},
        {"sprinkler_mode": "swap"},
    ],
)
def test_invalid_tomato_configs(kwargs):
    with pytest.raises(ValueError):
        TomatoConfig(**kwargs)


def test_only_standing_on_a_dry_tomato_is_unreachable():
    # state id = cell * 4 + wet bits; cell 0 holds tomato 0 (bit 0), cell 8 tomato 1 (bit 1)
    unreachable = np.flatnonzero(~tomato_reachable())
    assert unreachable.tolist() == [0, 2, 32, 33]


def test_chain_rejects_single_state():
    with pytest.raises(ValueError):
        make_chain(1)


def test_chain_is_seeded():
    a, b = make_chain(5, seed=9), make_chain(5, seed=9)
    np.testing.assert_array_equal(a.mdp.transitions, b.mdp.transitions)
    np.testing.assert_array_equal(a.proxy_raw, b.proxy_raw)
    np.testing.assert_array_equal(a.true_raw, b.true_raw)
    assert a.to_json() == b.to_json()


@pytest.mark.parametrize("corr", [0.1, 0.5, 0.9])
def test_chain_correlation(corr):
    b = make_chain(6, seed=2, correlation=corr)
    w = exact_occupancy(b.mdp, b.reference).mass
    assert abs(weighted_correlation(b.proxy_raw, b.true_raw, w) - corr) < 0.05


def test_make_env_dispatch():
    assert make_env("tomato", bonus=1.0).metadata["config"]["bonus"] == 1.0
    assert make_env("chain", n_states=3).mdp.n_states == 3
    with pytest.raises(ValueError):
        make_env("maze")


def test_bundle_json(tomato):
    doc = json.loads(tomato.to_json())
    assert doc["n_states"] == 36 and doc["metadata"]["name"] == "tomato"
    assert len(doc["features"][0][0]) == 3
