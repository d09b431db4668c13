"""Probability-flow ODE in the gamma variable and its first-order backward-error term.

The flow is

    dx/dgamma = f(gamma, x) = x / (2 gamma) - eps(gamma, x) / (2 gamma sqrt(1 - gamma)),

and one explicit Euler step of size h departs from the exact flow by approximately
``(h^2 / 2) g(gamma, x)`` with the correction term

    g = df/dgamma + 1/2 grad_x ||f||^2        (partial in gamma at fixed x).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError


class FlowField:
    """Wraps a noise predictor as the flow f(gamma, x).

    ``calls`` counts predictor evaluations (including analytic-derivative queries);
    samplers read it to do NFE accounting.
    """

    def __init__(self, predictor):
        self.predictor = predictor
        self.calls = 0

    @property
    def dim(self) -> int:
        return self.predictor.dim

    def eval(self, gamma, x):
        g = np.asarray(gamma, dtype=float)
        if np.any(g <= 0) or np.any(g >= 1) or np.any(np.isnan(g)):
            raise DomainError("flow is only defined for gamma in (0, 1)")
        affine = getattr(self.predictor, "affine_flow", None)
        if affine is not None:
            self.calls += 1
            return affine(gamma, x)
        eps = self.predictor.predict(gamma, x)
        self.calls += 1
        if g.ndim:
            g = g[..., None]
        return np.asarray(x) / (2 * g) - eps / (2 * g * np.sqrt(1.0 - g))

    __call__ = eval

    def analytic_parts(self, gamma, x):
        """``(f, df/dgamma, J^T f)`` from the model's closed-form flow coefficients."""
        g = np.asarray(gamma, dtype=float)
        if np.any(g <= 0) or np.any(g >= 1):
            raise DomainError("flow is only defined for gamma in (0, 1)")
        c, b, dc, db = self.predictor.flow_coefficients(gamma)
        self.calls += 1
        x = np.asarray(x, dtype=float)
        f = c * x + b
        return f, dc * x + db, c * f


def flow(field: FlowField, gamma, x):
    return field.eval(gamma, x)


class CorrectionMethod(str, Enum):
    ANALYTIC = "analytic"
    SYMMETRIC_JACOBIAN_FD = "symmetric_jacobian_fd"
    FULL_GRADIENT_FD = "full_gradient_fd"


def _row_norm(v):
    return np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


@dataclass(frozen=True)
class CorrectionEstimator:
    """Estimates g = df/dgamma + 1/2 grad ||f||^2.

    ``fd_step_gamma`` / ``fd_step_x`` of ``None`` select the defaults
    ``max(1e-6, 1e-4 gamma)`` (shrunk to stay inside (0, 1)) and
    ``1e-4 (1 + ||x||_inf)``.
    """

    method: CorrectionMethod = CorrectionMethod.SYMMETRIC_JACOBIAN_FD
    fd_step_gamma: float | None = None
    fd_step_x: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", CorrectionMethod(self.method))
        for name in ("fd_step_gamma", "fd_step_x"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive, got {val}")

    def evals_per_call(self, dim: int, reuse_flow: bool = True) -> int:
        """Predictor evaluations one correction costs beyond a reused f(gamma, x)."""
        if self.method is CorrectionMethod.ANALYTIC:
            return 1
        extra = 0 if reuse_flow else 1
        if self.method is CorrectionMethod.SYMMETRIC_JACOBIAN_FD:
            return 4 + extra
        return 2 + 2 * dim

    def check_capabilities(self, predictor) -> None:
        if (self.method is CorrectionMethod.ANALYTIC
                and not getattr(predictor, "has_analytic_flow_derivatives", False)):
            raise ConfigError("analytic correction requires a predictor with analytic flow derivatives")
        if (self.method is CorrectionMethod.SYMMETRIC_JACOBIAN_FD
                and not getattr(predictor, "is_gradient_field", False)):
            raise ConfigError("symmetric-Jacobian correction requires a gradient-field predictor")

    def _gamma_step(self, g):
        if self.fd_step_gamma is not None:
            step = np.full_like(g, self.fd_step_gamma)
            if np.any(g - step <= 0) or np.any(g + step >= 1):
                raise DomainError("gamma +/- fd_step_gamma leaves (0, 1)")
            return step
        step = np.maximum(1e-6, 1e-4 * g)
        return np.minimum(step, 0.5 * np.minimum(g, 1.0 - g))

    def _x_step(self, x):
        if self.fd_step_x is not None:
            return np.full(x.shape[:-1] + (1,), self.fd_step_x)
        return 1e-4 * (1.0 + np.max(np.abs(x), axis=-1, keepdims=True))

    def partial_gamma(self, field: FlowField, gamma, x):
        g = np.asarray(gamma, dtype=float)
        dg = self._gamma_step(g)
        dg_b = dg[..., None] if dg.ndim else dg
        return (field.eval(g + dg, x) - field.eval(g - dg, x)) / (2 * dg_b)

    def half_grad_sq_norm(self, field: FlowField, gamma, x, f=None):
        """1/2 grad_x ||f||^2 by the configured finite-difference scheme."""
        x = np.asarray(x, dtype=float)
        dx = self._x_step(x)
        if self.method is CorrectionMethod.SYMMETRIC_JACOBIAN_FD:
            if f is None:
                f = field.eval(gamma, x)
            norm = _row_norm(f)
            direction = np.divide(f, norm, out=np.zeros_like(f), where=norm > 0)
            jf = (field.eval(gamma, x + dx * direction)
                  - field.eval(gamma, x - dx * direction)) / (2 * dx)
            return jf * norm
        out = np.empty_like(x)
        for k in range(x.shape[-1]):
            e = np.zeros_like(x)
            e[..., k] = dx[..., 0]
            fp = field.eval(gamma, x + e)
            fm = field.eval(gamma, x - e)
            out[..., k] = (np.sum(fp * fp, axis=-1) - np.sum(fm * fm, axis=-1)) / (4 * dx[..., 0])
        return out

    def correction(self, field: FlowField, gamma, x, f=None):
        self.check_capabilities(field.predictor)
        if self.method is CorrectionMethod.ANALYTIC:
            _, dfdg, jtf = field.analytic_parts(gamma, x)
            return dfdg + jtf
        return self.partial_gamma(field, gamma, x) + self.half_grad_sq_norm(field, gamma, x, f)


def correction_term(est: CorrectionEstimator, field: FlowField, gamma, x, f=None):
    """g(gamma, x) = df/dgamma + 1/2 grad ||f||^2. ``f`` may pass a precomputed f(gamma, x)."""
    return est.correction(field, gamma, x, f)


def backward_error_prediction(field: FlowField, est: CorrectionEstimator, gamma, x, h):
    """Leading-order gap ``(h^2 / 2) g`` between the exact flow and one Euler step."""
    g = np.asarray(gamma, dtype=float)
    h_arr = np.asarray(h, dtype=float)
    if np.any(g + h_arr <= 0) or np.any(g + h_arr > 1):
        raise DomainError("gamma + h must lie in (0, 1]")
    if h_arr.ndim:
        h_arr = h_arr[..., None]
    return 0.5 * h_arr * h_arr * correction_term(est, field, gamma, x)
