import numpy as np
import pytest

from robustpo import _kernels
from robustpo.estimators import empirical_occupancy, trajectory_returns
from robustpo.mdp import SoftmaxPolicy, random_mdp, sample_trajectories

pytestmark = pytest.mark.skipif(not _kernels._HAVE_NUMBA, reason="numba not importable")


@pytest.fixture
def restore_backend():
    before = _kernels.backend()
    yield
    _kernels.set_backend(before)


def _run(backend):
    _kernels.set_backend(backend)
    mdp = random_mdp(7, 3, 0.9, 11)
    pol = SoftmaxPolicy(np.random.default_rng(1).normal(size=(7, 3)))
    batch = sample_trajectories(mdp, pol, 3000, 40, rng=123)
    reward = np.random.default_rng(2).normal(size=(7, 3))
    return batch, empirical_occupancy(batch, 0.9).mass, trajectory_returns(batch, reward, 0.9)


def test_backends_are_bit_identical(restore_backend):
    b_nb, occ_nb, ret_nb = _run("numba")
    b_np, occ_np, ret_np = _run("numpy")
    np.testing.assert_array_equal(b_nb.states, b_np.states)
    np.testing.assert_array_equal(b_nb.actions, b_np.actions)
    np.testing.assert_array_equal(ret_nb, ret_np)
    np.testing.assert_allclose(occ_nb, occ_np, rtol=1e-13, atol=1e-16)


def test_set_backend_rejects_unknown(restore_backend):
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")
    _kernels.set_backend("numpy")
    assert _kernels.backend() == "numpy"


def test_env_flag_disables_numba(monkeypatch):
    monkeypatch.setenv("ROBUSTPO_DISABLE_NUMBA", "1")
    assert _kernels._env_disabled()
    monkeypatch.setenv("ROBUSTPO_DISABLE_NUMBA", "0")
    assert not _kernels._env_disabled()
