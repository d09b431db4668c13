"""Closed-form noise predictors for Gaussian and Gaussian-mixture data.

For data ``x_0 ~ q_0`` the forward marginal at retention ``gamma`` is
``x = sqrt(gamma) x_0 + sqrt(1 - gamma) eps``, and the optimal noise predictor is

    eps*(gamma, x) = -sqrt(1 - gamma) * grad_x log q_gamma(x).

Every predictor here accepts a state of shape ``(..., d)`` and ``gamma`` either as a
scalar or as an array of shape ``x.shape[:-1]`` (one gamma per row).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DomainError


class NoisePredictor(Protocol):
    dim: int
    has_analytic_flow_derivatives: bool
    is_gradient_field: bool

    def predict(self, gamma, x: np.ndarray) -> np.ndarray: ...


def _check_inputs(gamma, x: np.ndarray, dim: int):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (dim,):
        raise DomainError(f"state has trailing dimension {x.shape[-1:]}, expected ({dim},)")
    if isinstance(gamma, (float, int, np.floating)):
        if not 0 < gamma <= 1:
            raise DomainError("gamma must lie in (0, 1]")
        return float(gamma), x
    g = np.asarray(gamma, dtype=float)
    if np.any(g <= 0) or np.any(g > 1) or np.any(np.isnan(g)):
        raise DomainError("gamma must lie in (0, 1]")
    if g.ndim:
        if g.shape != x.shape[:-1]:
            raise DomainError(f"gamma shape {g.shape} does not match batch shape {x.shape[:-1]}")
        g = g[..., None]
    return g, x


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Data distribution ``N(mean, diag(cov_diag))``."""

    mean: np.ndarray
    cov_diag: np.ndarray

    has_analytic_flow_derivatives = True
    is_gradient_field = True

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_1d(np.asarray(self.cov_diag, dtype=float))
        if mean.ndim != 1 or mean.shape != cov.shape:
            raise ConfigError("mean and cov_diag must be 1-D arrays of equal length")
        if np.any(cov <= 0):
            raise ConfigError("cov_diag entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_diag", cov)

    @classmethod
    def isotropic(cls, dim: int, var: float = 1.0, mean: float = 0.0) -> GaussianModel:
        return cls(np.full(dim, float(mean)), np.full(dim, float(var)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def marginal_var(self, gamma):
        return gamma * self.cov_diag + (1.0 - gamma)

    def predict(self, gamma, x):
        g, x = _check_inputs(gamma, x, self.dim)
        v = self.marginal_var(g)
        if isinstance(g, float):
            return math.sqrt(1.0 - g) * (x - math.sqrt(g) * self.mean) / v
        return np.sqrt(1.0 - g) * (x - np.sqrt(g) * self.mean) / v

    def log_density(self, gamma, x):
        g, x = _check_inputs(gamma, x, self.dim)
        v = self.marginal_var(g)
        r = x - np.sqrt(g) * self.mean
        return -0.5 * np.sum(r * r / v + np.log(2 * np.pi * v), axis=-1)

    def flow_coefficients(self, gamma):
        """Coefficients of the affine flow ``f = c x + b`` and their gamma-derivatives.

        Returns ``(c, b, dc, db)``, each broadcastable against a state of shape
        ``(..., d)``.
        """
        g = np.asarray(gamma, dtype=float)
        if g.ndim:
            g = g[..., None]
        a = self.cov_diag - 1.0
        v = self.marginal_var(g)
        sg = np.sqrt(g)
        c = a / (2 * v)
        b = self.mean / (2 * sg * v)
        dc = -a * a / (2 * v * v)
        db = self.mean * (-1.0 / (4 * g * sg * v) - a / (2 * sg * v * v))
        return c, b, dc, db

    def affine_flow(self, gamma, x):
        """The flow evaluated as ``c x + b``; avoids the cancellation in ``x / 2g - eps / ...``
        at small gamma."""
        _, x = _check_inputs(gamma, x, self.dim)
        c, b, _, _ = self.flow_coefficients(gamma)
        return c * x + b

    def exact_solution(self, gamma_start, x_start, gamma_end):
        """Exact probability-flow transport of ``x_start`` from ``gamma_start`` to ``gamma_end``.

        Each coordinate follows ``x(gamma) = sqrt(gamma) mu + sqrt(v(gamma) / v(gamma_0))
        (x_0 - sqrt(gamma_0) mu)`` with ``v(gamma) = gamma sigma^2 + 1 - gamma``.
        """
        g0, x = _check_inputs(gamma_start, x_start, self.dim)
        g1, _ = _check_inputs(gamma_end, x_start, self.dim)
        scale = np.sqrt(self.marginal_var(g1) / self.marginal_var(g0))
        return np.sqrt(g1) * self.mean + scale * (x - np.sqrt(g0) * self.mean)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.cov_diag) * rng.standard_normal((n, self.dim))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "cov_diag": self.cov_diag.tolist()}


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Mixture of diagonal Gaussians with the given ``weights``.

    ``means`` and ``cov_diags`` have shape ``(n_components, d)``.
    """

    weights: np.ndarray
    means: np.ndarray
    cov_diags: np.ndarray

    has_analytic_flow_derivatives = False
    is_gradient_field = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov_diags, dtype=float))
        if w.ndim != 1 or mu.shape != cov.shape or mu.shape[0] != w.shape[0]:
            raise ConfigError("weights (k,), means (k, d) and cov_diags (k, d) disagree in shape")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
        if np.any(cov <= 0):
            raise ConfigError("cov_diags entries must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "cov_diags", cov)

    @classmethod
    def symmetric_pair(cls, dim: int, offset: float = 3.0, var: float = 1.0) -> GmmModel:
        """Equal-weight components at ``+offset`` and ``-offset`` in every coordinate."""
        mu = np.full(dim, float(offset))
        return cls(np.array([0.5, 0.5]), np.stack([mu, -mu]), np.full((2, dim), float(var)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _component_terms(self, g, x):
        # g: () or batch shape; x: (..., d); per-component arrays are (..., k, d)
        g = np.asarray(g)[..., None, None] if np.ndim(g) else g
        v = g * self.cov_diags + (1.0 - g)
        r = x[..., None, :] - np.sqrt(g) * self.means
        log_comp = np.log(self.weights, where=self.weights > 0,
                          out=np.full_like(self.weights, -np.inf))
        log_p = log_comp - 0.5 * np.sum(r * r / v + np.log(2 * np.pi * v), axis=-1)
        return v, r, log_p

    def predict(self, gamma, x):
        g, x = _check_inputs(gamma, x, self.dim)
        v, r, log_p = self._component_terms(g[..., 0] if np.ndim(g) else g, x)
        resp = np.exp(log_p - logsumexp(log_p, axis=-1, keepdims=True))
        return np.sqrt(1.0 - g) * np.sum(resp[..., None] * r / v, axis=-2)

    def log_density(self, gamma, x):
        g, x = _check_inputs(gamma, x, self.dim)
        _, _, log_p = self._component_terms(g[..., 0] if np.ndim(g) else g, x)
        return logsumexp(log_p, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.cov_diags[comp]) * z

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "gmm", "weights": self.weights.tolist(), "means": self.means.tolist(),
                "cov_diags": self.cov_diags.tolist()}


def gaussian_predict(model: GaussianModel, gamma, x):
    return model.predict(gamma, x)


def gmm_predict(model: GmmModel, gamma, x):
    return model.predict(gamma, x)


def gaussian_exact_solution(model: GaussianModel, gamma_start, x_start, gamma_end):
    return model.exact_solution(gamma_start, x_start, gamma_end)


def model_from_dict(d: dict[str, Any]) -> GaussianModel | GmmModel:
    d = dict(d)
    kind = d.pop("kind", "gaussian")
    if kind == "gaussian":
        allowed = {"mean", "cov_diag", "dim", "var"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown gaussian model keys: {sorted(unknown)}")
        if "mean" in d or "cov_diag" in d:
            dim = int(d.get("dim", len(d.get("mean", d.get("cov_diag", [0.0])))))
            mean = np.broadcast_to(np.asarray(d.get("mean", 0.0), float), (dim,))
            cov = np.broadcast_to(np.asarray(d.get("cov_diag", d.get("var", 1.0)), float), (dim,))
            return GaussianModel(mean.copy(), cov.copy())
        return GaussianModel.isotropic(int(d.get("dim", 1)), float(d.get("var", 1.0)))
    if kind == "gmm":
        allowed = {"weights", "means", "cov_diags", "dim", "offset", "var"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown gmm model keys: {sorted(unknown)}")
        if "means" in d:
            means = np.asarray(d["means"], float)
            k = means.shape[0]
            weights = np.asarray(d.get("weights", np.full(k, 1.0 / k)), float)
            cov = np.asarray(d.get("cov_diags", np.ones_like(means)), float)
            return GmmModel(weights, means, np.broadcast_to(cov, means.shape).copy())
        return GmmModel.symmetric_pair(int(d.get("dim", 2)), float(d.get("offset", 3.0)),
                                       float(d.get("var", 1.0)))
    raise ConfigError(f"unknown model kind {kind!r}")


def score_fd(model, gamma: float, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of ``model.log_density`` in x (single state)."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[k] = step
        grad[k] = (model.log_density(gamma, x + e) - model.log_density(gamma, x - e)) / (2 * step)
    return grad


def noise_from_score(gamma: float, score: np.ndarray) -> np.ndarray:
    return -math.sqrt(1.0 - gamma) * score
