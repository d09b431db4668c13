import numpy as np
import pytest

from bea_sampler import GaussianModel, GmmModel
from bea_sampler.errors import ConfigError, DomainError
from bea_sampler.models import model_from_dict, noise_from_score, score_fd


def test_gaussian_predict_closed_form():
    m = GaussianModel.isotropic(1, 4.0)
    # eps = sqrt(1-g) (x - sqrt(g) mu) / v with v = g*4 + 1 - g
    g, x = 0.5, np.array([1.0])
    assert m.predict(g, x)[0] == pytest.approx(np.sqrt(0.5) / 2.5, rel=1e-14)


@pytest.mark.parametrize("model", [
    GaussianModel(np.array([0.5, -1.0, 2.0]), np.array([0.25, 1.0, 4.0])),
    GmmModel.symmetric_pair(3),
    GmmModel(np.array([0.2, 0.5, 0.3]), np.array([[0.0, 1.0], [2.0, -1.0], [-3.0, 0.5]]),
             np.array([[1.0, 0.5], [2.0, 1.0], [0.3, 0.3]])),
])
@pytest.mark.parametrize("gamma", [0.05, 0.4, 0.9])
def test_predictor_matches_score_identity(model, gamma, rng):
    for _ in range(5):
        x = rng.standard_normal(model.dim) * 2
        ref = noise_from_score(gamma, score_fd(model, gamma, x))
        assert np.allclose(model.predict(gamma, x), ref, atol=1e-7)


def test_gmm_single_component_equals_gaussian(rng):
    g = GaussianModel(np.array([1.0, -2.0]), np.array([0.5, 3.0]))
    mix = GmmModel(np.array([1.0]), g.mean[None], g.cov_diag[None])
    x = rng.standard_normal((10, 2))
    assert np.allclose(g.predict(0.3, x), mix.predict(0.3, x), atol=1e-14)


def test_gmm_symmetric_pair_is_odd(rng):
    m = GmmModel.symmetric_pair(2)
    x = rng.standard_normal((20, 2))
    assert np.allclose(m.predict(0.5, -x), -m.predict(0.5, x), atol=1e-14)


def test_exact_solution_identity_and_endpoint(rng):
    m = GaussianModel.isotropic(4, 4.0)
    x = rng.standard_normal(4)
    assert np.allclose(m.exact_solution(0.3, x, 0.3), x)
    # variance transports from v(g0) to sigma^2
    xs = rng.standard_normal((20000, 4)) * np.sqrt(m.marginal_var(0.2)[0])
    out = m.exact_solution(0.2, xs, 1.0)
    assert out.var() == pytest.approx(4.0, rel=0.03)


def test_batch_gamma_per_row(rng):
    m = GmmModel.symmetric_pair(2)
    x = rng.standard_normal((3, 2))
    g = np.array([0.2, 0.5, 0.8])
    rows = np.stack([m.predict(gi, xi) for gi, xi in zip(g, x)])
    assert np.allclose(m.predict(g, x), rows)


@pytest.mark.parametrize("bad", [0.0, 1.5, -0.2])
def test_domain(bad):
    with pytest.raises(DomainError):
        GaussianModel.isotropic(1).predict(bad, np.zeros(1))


def test_shape_and_param_validation():
    with pytest.raises(DomainError):
        GaussianModel.isotropic(2).predict(0.5, np.zeros(3))
    with pytest.raises((ConfigError, DomainError, ValueError)):
        GaussianModel(np.zeros(2), np.array([1.0, -1.0]))
    with pytest.raises((ConfigError, ValueError)):
        GmmModel(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones((2, 1)))


def test_model_from_dict():
    m = model_from_dict({"kind": "gaussian", "dim": 3, "var": 4.0})
    assert m.dim == 3 and np.all(m.cov_diag == 4.0)
    g = model_from_dict({"kind": "gmm", "dim": 2})
    assert np.allclose(g.means, [[3, 3], [-3, -3]]) or np.allclose(g.means, [[-3, -3], [3, 3]])
    with pytest.raises(ConfigError):
        model_from_dict({"kind": "gaussian", "sigma": 2})
    with pytest.raises(ConfigError):
        model_from_dict({"kind": "laplace"})
