import numpy as np
import pytest

from robustpo.errors import NumericalError, ShapeError
from robustpo.mdp import (
    OccupancyMeasure,
    SoftmaxPolicy,
    TabularMdp,
    exact_occupancy,
    occupancy_jacobian,
    policy_gradient,
    random_mdp,
    return_value,
    sample_trajectories,
)
from robustpo.oracle import finite_difference_gradient


def cycle_mdp(discount=0.5):
    p = np.zeros((2, 2, 2))
    p[0, :, 1] = 1.0
    p[1, :, 0] = 1.0
    return TabularMdp(p, np.array([1.0, 0.0]), discount)


def test_single_state_single_action():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones(1), 0.9)
    np.testing.assert_allclose(exact_occupancy(mdp, SoftmaxPolicy.uniform(1, 1)).mass, [[1.0]])


def test_deterministic_cycle_matches_geometric_sum(frozen):
    mass = exact_occupancy(cycle_mdp(), SoftmaxPolicy.uniform(2, 2)).mass
    np.testing.assert_allclose(mass, frozen["cycle_occupancy"], atol=1e-14)


def test_occupancy_sums_to_one():
    mdp = random_mdp(5, 3, 0.9, 1)
    pol = SoftmaxPolicy(np.random.default_rng(2).normal(size=(5, 3)))
    assert exact_occupancy(mdp, pol).mass.sum() == pytest.approx(1.0, abs=1e-12)


def test_constant_reward_returns_constant():
    mdp = random_mdp(4, 2, 0.8, 0)
    o = exact_occupancy(mdp, SoftmaxPolicy.uniform(4, 2))
    assert return_value(o, np.full((4, 2), 2.5)) == pytest.approx(2.5)


def test_return_dot_product(frozen):
    o = OccupancyMeasure(np.array([[0.8, 0.2]]))
    assert return_value(o, np.array([[1.0, -1.0]])) == pytest.approx(frozen["return_dot"])


def test_return_zero_reward():
    o = OccupancyMeasure(np.array([[0.8, 0.2]]))
    assert return_value(o, np.zeros((1, 2))) == 0.0


def test_shape_errors():
    mdp = cycle_mdp()
    with pytest.raises(ShapeError):
        exact_occupancy(mdp, SoftmaxPolicy.uniform(3, 2))
    with pytest.raises(ShapeError):
        return_value(OccupancyMeasure(np.ones((1, 2)) / 2), np.ones((2, 2)))
    with pytest.raises(ShapeError):
        TabularMdp(np.ones((2, 2, 3)), np.array([1.0, 0.0]), 0.5)


def test_invalid_mdp_inputs():
    p = np.full((2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(p, np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        TabularMdp(p * 2, np.array([1.0, 0.0]), 0.5)
    with pytest.raises(NumericalError):
        SoftmaxPolicy(np.array([[np.nan, 0.0]]))


def test_sampling_is_deterministic_per_seed():
    mdp = random_mdp(4, 2, 0.9, 0)
    pol = SoftmaxPolicy.uniform(4, 2)
    a = sample_trajectories(mdp, pol, 50, 20, rng=7)
    b = sample_trajectories(mdp, pol, 50, 20, rng=7)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.actions, b.actions)
    c = sample_trajectories(mdp, pol, 50, 20, rng=8)
    assert not np.array_equal(a.states, c.states)


def test_deterministic_mdp_and_policy_give_identical_paths():
    mdp = cycle_mdp()
    pol = SoftmaxPolicy(np.array([[50.0, -50.0], [50.0, -50.0]]))
    batch = sample_trajectories(mdp, pol, 10, 6, rng=0)
    assert (batch.states == batch.states[0]).all()
    assert (batch.actions == batch.actions[0]).all()
    np.testing.assert_array_equal(batch.states[0], [0, 1, 0, 1, 0, 1])


def test_trajectory_indices_in_bounds():
    mdp = random_mdp(6, 3, 0.9, 4)
    batch = sample_trajectories(mdp, SoftmaxPolicy.uniform(6, 3), 200, 30, rng=1)
    assert batch.states.min() >= 0 and batch.states.max() < 6
    assert batch.actions.min() >= 0 and batch.actions.max() < 3
    assert batch.states.shape == batch.actions.shape == (200, 30)


def test_default_horizon_covers_discount_tail():
    mdp = random_mdp(3, 2, 0.95, 0)
    h = mdp.default_horizon()
    assert 0.95**h < 1e-6


def test_bad_sample_arguments():
    mdp = cycle_mdp()
    with pytest.raises(ValueError):
        sample_trajectories(mdp, SoftmaxPolicy.uniform(2, 2), 0)
    with pytest.raises(ValueError):
        sample_trajectories(mdp, SoftmaxPolicy.uniform(2, 2), 3, 0)


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    mdp = random_mdp(3, 2, 0.8, rng)
    reward = rng.normal(size=(3, 2))
    z = rng.normal(size=(3, 2))

    def f(x):
        return return_value(exact_occupancy(mdp, SoftmaxPolicy(x)), reward)

    g = policy_gradient(mdp, SoftmaxPolicy(z), reward)
    fd = finite_difference_gradient(f, z, 1e-5)
    assert np.max(np.abs(g - fd)) <= 1e-5 * max(1e-12, np.max(np.abs(fd)))


def test_occupancy_jacobian_matches_finite_differences():
    rng = np.random.default_rng(9)
    mdp = random_mdp(4, 3, 0.9, rng)
    z = rng.normal(size=(4, 3))
    jac = occupancy_jacobian(mdp, SoftmaxPolicy(z))
    for k in range(12):
        step = np.zeros(12)
        step[k] = 1e-6
        plus = exact_occupancy(mdp, SoftmaxPolicy(z + step.reshape(4, 3))).mass.ravel()
        minus = exact_occupancy(mdp, SoftmaxPolicy(z - step.reshape(4, 3))).mass.ravel()
        np.testing.assert_allclose(jac[:, k], (plus - minus) / 2e-6, atol=1e-8)
