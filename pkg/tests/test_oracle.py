import numpy as np
import pytest

from volterrafilter.engine import ObservationModel
from volterrafilter.errors import DomainError
from volterrafilter.kernels import TimeGrid, VolterraKernel
from volterrafilter.oracle import MAX_DIMENSION, JointGaussian, assemble_joint, condition, filtered_law
from volterrafilter.simulate import simulate_batch
from volterrafilter.spectral import SignalModel, signal_covariance

FBM = VolterraKernel.fbm(0.75)


@pytest.fixture(scope="module")
def case():
    model = SignalModel.from_decay(3, 1.0, FBM)
    obs = ObservationModel((0.3, 0.6), 3)
    grid = TimeGrid(1.0, 12)
    return model, obs, grid, assemble_joint(model, obs, grid)


@pytest.mark.parametrize("rho", [0.0, 0.3, -0.8])
def test_bivariate_textbook(rho):
    joint = JointGaussian(np.array([[1.0, rho], [rho, 1.0]]), 1, 1, 1)
    mean, cov = condition(joint, np.array([[2.0], [-1.0]]))
    assert np.allclose(mean[:, 0], [2 * rho, -rho])
    assert cov[0, 0] == pytest.approx(1 - rho * rho)


def test_signal_block_equals_simulator_covariance(case):
    model, obs, grid, joint = case
    tab = signal_covariance(model, grid)  # (N, I, I)
    sig = joint.cov[np.ix_(joint.signal_index, joint.signal_index)].reshape(12, 3, 12, 3)
    for k in range(3):
        assert np.allclose(sig[:, k, :, k], tab[k, 1:, 1:], rtol=1e-12, atol=1e-16)
    assert np.allclose(sig[:, 0, :, 1], 0.0, atol=1e-16)


def test_coupled_signal_block():
    m = 32
    x = (np.arange(m) + 0.5) / m
    model = SignalModel.from_kernel_samples(3, x, np.exp(-((x[:, None] - x[None, :]) ** 2) / 0.05), FBM)
    obs = ObservationModel((0.5,), 3)
    grid = TimeGrid(1.0, 6)
    joint = assemble_joint(model, obs, grid)
    tab = signal_covariance(model, grid)
    sig = joint.cov[np.ix_(joint.signal_index, joint.signal_index)].reshape(6, 3, 6, 3)
    assert np.allclose(sig.transpose(1, 3, 0, 2), tab[:, :, 1:, 1:], rtol=1e-12, atol=1e-16)


def test_prefix_conditioning_is_consistent(case):
    # conditioning the node-l marginal directly equals the law read off the full factorisation
    model, obs, grid, joint = case
    law = filtered_law(model, obs, grid, joint)
    for l in (1, 5, 12):
        small = joint.restrict(l)
        y = np.zeros(small.obs_index.size)
        _, cov = condition(small, y, signal_index=small.signal_at(l))
        assert np.allclose(cov, law.cov[l], rtol=0, atol=1e-10 * np.abs(cov).max())
        c = small.cov
        gain = np.linalg.solve(c[np.ix_(small.obs_index, small.obs_index)], c[np.ix_(small.obs_index, small.signal_at(l))]).T
        assert np.allclose(law.gains[l, :, : l * obs.size], gain, atol=1e-10 * np.abs(gain).max())
        assert not np.any(law.gains[l, :, l * obs.size :])


def test_zero_information_is_identity(case):
    model, _, grid, _ = case
    obs = ObservationModel.zero(2, 3)
    joint = assemble_joint(model, obs, grid)
    law = filtered_law(model, obs, grid, joint)
    sig = joint.cov[np.ix_(joint.signal_index, joint.signal_index)]
    for l in (1, 6, 12):
        idx = joint.signal_at(l)
        assert np.allclose(law.cov[l], sig[np.ix_(idx, idx)], atol=1e-15)
    assert not np.any(law.gains)


def test_observation_block_against_simulation(case):
    model, obs, grid, joint = case
    _, xi, _ = simulate_batch(model, obs, grid, 31, range(20000))
    dxi = np.diff(xi, axis=1).reshape(20000, -1)
    o = joint.obs_index
    c = joint.cov[np.ix_(o, o)]
    for a, b in [(0, 0), (22, 22), (20, 23), (10, 18)]:
        prod = dxi[:, a] * dxi[:, b]
        se = prod.std(ddof=1) / np.sqrt(prod.size)
        assert abs(prod.mean() - c[a, b]) < 3 * se


def test_filtered_mean_batches(case):
    model, obs, grid, joint = case
    law = filtered_law(model, obs, grid, joint)
    _, xi, _ = simulate_batch(model, obs, grid, 1, range(3))
    m = law.mean(xi)
    assert m.shape == (3, 13, 3)
    assert np.allclose(m[1], law.mean(xi[1]))
    mean, _ = condition(joint, np.diff(xi, axis=1).reshape(3, -1), signal_index=joint.signal_at(12))
    assert np.allclose(m[:, 12], mean, atol=1e-10)


def test_size_guard():
    model = SignalModel.from_decay(8, 1.0, FBM)
    obs = ObservationModel((0.5,), 8)
    n = MAX_DIMENSION // 9 + 1
    with pytest.raises(DomainError):
        assemble_joint(model, obs, TimeGrid(1.0, n))
    with pytest.raises(DomainError):
        assemble_joint(model, obs, TimeGrid(1.0, 4), nodes=5)
    joint = assemble_joint(model, obs, TimeGrid(1.0, 4), nodes=2)
    with pytest.raises(DomainError):
        joint.signal_at(3)
