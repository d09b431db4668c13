"""Continuous noise schedules gamma_t on [0, T].

``gamma`` is the cumulative signal retention (alpha-bar): ``gamma(0) = 1`` at clean
data and it decreases strictly towards ``gamma(T)`` at the noise end. Both kinds
expose a closed-form inverse ``t_inverse`` and the per-step retention factors
``alpha_i = gamma(t_i) / gamma(t_{i-1})`` on the uniform grid ``t_i = i T / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .errors import ConfigError, DomainError

GAMMA_FLOOR = 1e-5

# slack for float round-off when checking domain boundaries
_EDGE_RTOL = 1e-12


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    COSINE = "cosine"


@dataclass(frozen=True)
class NoiseSchedule:
    """A noise schedule of a given ``kind``.

    Linear: per-step variances ``beta_i`` linearly spaced from ``beta_start`` to
    ``beta_end`` over ``n_discrete`` steps; ``log gamma`` is interpolated linearly
    between grid points, so ``gamma`` matches the discrete cumulative product exactly
    on the grid.

    Cosine: ``gamma(t) = floor + (1 - floor) f(t) / f(0)`` with
    ``f(t) = cos^2(((t/T + s) / (1 + s)) pi / 2)``. The affine floor keeps
    ``gamma(T) = gamma_floor`` while preserving strict monotonicity.
    """

    kind: ScheduleKind = ScheduleKind.LINEAR
    horizon_T: float = 1.0
    n_discrete: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    cosine_s: float = 0.008
    gamma_floor: float = GAMMA_FLOOR
    _log_gammas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not self.horizon_T > 0:
            raise ConfigError(f"horizon_T must be positive, got {self.horizon_T}")
        if int(self.n_discrete) != self.n_discrete or self.n_discrete < 1:
            raise ConfigError(f"n_discrete must be a positive integer, got {self.n_discrete}")
        if not 0 < self.gamma_floor < 1:
            raise ConfigError(f"gamma_floor must lie in (0, 1), got {self.gamma_floor}")
        if self.kind is ScheduleKind.LINEAR:
            if not (0 < self.beta_start < 1 and 0 < self.beta_end < 1):
                raise ConfigError("beta_start and beta_end must lie in (0, 1)")
            betas = np.linspace(self.beta_start, self.beta_end, self.n_discrete)
            log_gammas = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
            if log_gammas[-1] < math.log(self.gamma_floor):
                raise ConfigError(
                    f"linear schedule reaches gamma={math.exp(log_gammas[-1]):.3g} "
                    f"below gamma_floor={self.gamma_floor}; reduce beta_end or n_discrete"
                )
        else:
            if self.cosine_s < 0:
                raise ConfigError(f"cosine offset s must be nonnegative, got {self.cosine_s}")
            log_gammas = None
        object.__setattr__(self, "_log_gammas", log_gammas)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def linear(cls, n_discrete: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02, horizon_T: float = 1.0) -> NoiseSchedule:
        return cls(ScheduleKind.LINEAR, horizon_T, n_discrete, beta_start, beta_end)

    @classmethod
    def cosine(cls, n_discrete: int = 1000, s: float = 0.008,
               horizon_T: float = 1.0) -> NoiseSchedule:
        return cls(ScheduleKind.COSINE, horizon_T, n_discrete, cosine_s=s)

    def to_dict(self) -> dict[str, Any]:
        if self.kind is ScheduleKind.LINEAR:
            params = {"beta_start": self.beta_start, "beta_end": self.beta_end}
        else:
            params = {"s": self.cosine_s}
        return {"kind": self.kind.value, "T": self.horizon_T, "N": self.n_discrete,
                "params": params}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> NoiseSchedule:
        unknown = set(d) - {"kind", "T", "N", "params"}
        if unknown:
            raise ConfigError(f"unknown noise_schedule keys: {sorted(unknown)}")
        kind = ScheduleKind(d.get("kind", "linear"))
        params = dict(d.get("params", {}))
        T = float(d.get("T", 1.0))
        N = int(d.get("N", 1000))
        if kind is ScheduleKind.LINEAR:
            extra = set(params) - {"beta_start", "beta_end"}
            if extra:
                raise ConfigError(f"unknown linear schedule params: {sorted(extra)}")
            return cls.linear(N, float(params.get("beta_start", 1e-4)),
                              float(params.get("beta_end", 0.02)), T)
        extra = set(params) - {"s"}
        if extra:
            raise ConfigError(f"unknown cosine schedule params: {sorted(extra)}")
        return cls.cosine(N, float(params.get("s", 0.008)), T)

    # -- evaluation ------------------------------------------------------------

    @property
    def gamma_T(self) -> float:
        return float(self.gamma(self.horizon_T))

    def _cos_f(self, t):
        s = self.cosine_s
        return np.cos(((t / self.horizon_T + s) / (1 + s)) * (np.pi / 2)) ** 2

    def gamma(self, t):
        """gamma_t for scalar or array ``t`` in [0, T]."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.horizon_T) or np.any(np.isnan(t_arr)):
            raise DomainError(f"t must lie in [0, {self.horizon_T}]")
        if self.kind is ScheduleKind.LINEAR:
            u = t_arr / self.horizon_T * self.n_discrete
            i = np.minimum(np.floor(u), self.n_discrete - 1).astype(int)
            frac = u - i
            lg = self._log_gammas
            g = np.exp(lg[i] + frac * (lg[i + 1] - lg[i]))
            g = np.maximum(g, self.gamma_floor)
        else:
            ratio = self._cos_f(t_arr) / self._cos_f(0.0)
            g = self.gamma_floor + (1.0 - self.gamma_floor) * ratio
        g = np.where(t_arr == 0, 1.0, g)
        return float(g) if np.ndim(g) == 0 else g

    def t_inverse(self, g):
        """Time t with ``gamma(t) = g`` for scalar or array ``g`` in [gamma(T), 1]."""
        g_arr = np.asarray(g, dtype=float)
        lo = self.gamma_T
        if (np.any(g_arr > 1.0) or np.any(g_arr < lo * (1 - _EDGE_RTOL))
                or np.any(np.isnan(g_arr))):
            raise DomainError(f"gamma must lie in [{lo}, 1]")
        g_arr = np.maximum(g_arr, lo)
        T = self.horizon_T
        if self.kind is ScheduleKind.LINEAR:
            lg = self._log_gammas
            target = np.log(g_arr)
            # lg is strictly decreasing; search on its negation
            i = np.searchsorted(-lg, -target, side="right") - 1
            i = np.clip(i, 0, self.n_discrete - 1)
            frac = (target - lg[i]) / (lg[i + 1] - lg[i])
            t = (i + frac) * T / self.n_discrete
        else:
            s = self.cosine_s
            ratio = (g_arr - self.gamma_floor) / (1.0 - self.gamma_floor)
            cos_theta = np.sqrt(np.clip(ratio * self._cos_f(0.0), 0.0, 1.0))
            theta = np.arccos(cos_theta)
            t = T * (theta * 2 / np.pi * (1 + s) - s)
        t = np.clip(t, 0.0, T)
        t = np.where(g_arr == 1.0, 0.0, t)
        t = np.where(g_arr == lo, T, t)
        return float(t) if np.ndim(t) == 0 else t

    def grid_time(self, i: int) -> float:
        return i * self.horizon_T / self.n_discrete

    def alpha_at(self, i: int) -> float:
        """Per-step retention ``gamma(t_i) / gamma(t_{i-1})`` for i in 1..N."""
        if not (isinstance(i, (int, np.integer)) and 1 <= i <= self.n_discrete):
            raise DomainError(f"index must lie in 1..{self.n_discrete}, got {i}")
        return self.gamma(self.grid_time(i)) / self.gamma(self.grid_time(i - 1))

    def alphas(self) -> np.ndarray:
        g = self.gamma(np.arange(self.n_discrete + 1) * self.horizon_T / self.n_discrete)
        return g[1:] / g[:-1]
