"""Samplers for the gamma-parameterized probability-flow ODE.

* :func:`drbe_sample` picks each step so the predicted one-step backward error
  ``(h^2/2) rho(g)`` stays at the threshold ``r``.
* :func:`rbe_sample` runs explicit Euler on a fixed inference schedule.
* :func:`ddim_sample` and :func:`ancestral_sample` are the deterministic DDIM and
  stochastic DDPM baselines; :func:`reference_solve` is a fine-grid RK4 oracle.

Every sampler accepts a single state ``(d,)`` or a batch ``(n, d)``. For a batch the
second return value is a list of per-row :class:`Trajectory` objects.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DomainError, SolverDivergenceError
from .flow import CorrectionEstimator, FlowField
from .noise_schedule import NoiseSchedule


class Provenance(str, Enum):
    UNIFORM_TIME = "uniform_time"
    UNIFORM_GAMMA = "uniform_gamma"
    RBE = "rbe"
    MANUAL = "manual"


@dataclass(frozen=True, eq=False)
class InferenceSchedule:
    """Decreasing times ``t_1 = T > ... > t_{K+1} = 0`` and their gammas."""

    times: np.ndarray
    gammas: np.ndarray
    provenance: Provenance = Provenance.MANUAL

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        gammas = np.asarray(self.gammas, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if times.ndim != 1 or times.shape != gammas.shape or len(times) < 2:
            raise ConfigError("an inference schedule needs at least two matching time/gamma knots")
        if times[-1] != 0.0:
            raise ConfigError(f"inference schedule must end at t=0, got {times[-1]!r}")
        if np.any(np.diff(times) >= 0):
            raise ConfigError("monotonicity violation: times must be strictly decreasing")
        if np.any(np.diff(gammas) <= 0) or gammas[-1] != 1.0:
            raise ConfigError("monotonicity violation: gammas must increase strictly to 1")

    @property
    def steps_K(self) -> int:
        return len(self.times) - 1

    @classmethod
    def from_times(cls, schedule: NoiseSchedule, times: Sequence[float],
                   provenance: Provenance = Provenance.MANUAL) -> InferenceSchedule:
        times = np.asarray(times, dtype=float)
        if times.size and times[0] != schedule.horizon_T:
            raise ConfigError(f"inference schedule must start at t=T={schedule.horizon_T}")
        return cls(times, schedule.gamma(times), provenance)

    @classmethod
    def uniform_time(cls, schedule: NoiseSchedule, K: int) -> InferenceSchedule:
        times = np.linspace(schedule.horizon_T, 0.0, K + 1)
        times[-1] = 0.0
        return cls.from_times(schedule, times, Provenance.UNIFORM_TIME)

    @classmethod
    def uniform_gamma(cls, schedule: NoiseSchedule, K: int) -> InferenceSchedule:
        gammas = np.linspace(schedule.gamma_T, 1.0, K + 1)
        gammas[0], gammas[-1] = schedule.gamma_T, 1.0
        times = schedule.t_inverse(gammas)
        times[0], times[-1] = schedule.horizon_T, 0.0
        return cls(times, gammas, Provenance.UNIFORM_GAMMA)


class StepRecord(NamedTuple):
    t: float
    gamma: float
    x: np.ndarray
    h_gamma: float
    correction_norm: float | None


@dataclass(eq=False)
class Trajectory:
    """States visited by one sampling run.

    Row k holds the state at the start of step k together with the step ``h`` taken
    from it; the last row is the terminal state with ``h = 0``. ``correction_norm``
    is NaN where no correction was computed.
    """

    t: np.ndarray
    gamma: np.ndarray
    x: np.ndarray
    h: np.ndarray
    correction_norm: np.ndarray
    nfe: int
    seed: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def times(self) -> np.ndarray:
        """The visited times, i.e. the run's schedule."""
        return self.t

    @property
    def records(self) -> Iterator[StepRecord]:
        for k in range(len(self.t)):
            cn = self.correction_norm[k]
            yield StepRecord(float(self.t[k]), float(self.gamma[k]), self.x[k],
                             float(self.h[k]), None if np.isnan(cn) else float(cn))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        d = self.x.shape[1]
        writer.writerow(["step", "t", "gamma", "h", "correction_norm"]
                        + [f"x_{k}" for k in range(d)])
        for k, rec in enumerate(self.records):
            cn = "" if rec.correction_norm is None else repr(rec.correction_norm)
            writer.writerow([k, repr(rec.t), repr(rec.gamma), repr(rec.h_gamma), cn]
                            + [repr(float(v)) for v in rec.x])
        return buf.getvalue()


def correction_norm(g: np.ndarray, kind: str = "rms") -> np.ndarray:
    """Row-wise norm of the correction term: ``rms`` (l2 / sqrt(d)), ``l2`` or ``linf``."""
    if kind == "rms":
        return np.sqrt(np.mean(g * g, axis=-1))
    if kind == "l2":
        return np.sqrt(np.sum(g * g, axis=-1))
    if kind == "linf":
        return np.max(np.abs(g), axis=-1)
    raise ConfigError(f"unknown correction norm {kind!r}")


def _as_batch(x_init):
    x = np.array(x_init, dtype=float)
    if x.ndim not in (1, 2):
        raise DomainError("x_init must have shape (d,) or (n, d)")
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(np.isfinite(x)):
        raise DomainError("x_init must be finite")
    return x, single


def _shared_trajectories(times, gammas, hs, xs, nfe, cnorm=None):
    # xs: (steps + 1, n, d); the time grid is common to every row
    n = xs.shape[1]
    cn = np.full(len(times), np.nan) if cnorm is None else cnorm
    return [Trajectory(times, gammas, xs[:, i, :], hs, cn, nfe) for i in range(n)]


def _finish(x, trajs, single):
    if single:
        return x[0], trajs[0]
    return x, trajs


@dataclass(frozen=True)
class DrbeOptions:
    """Safeguards around the adaptive step law.

    ``first_step_cap`` limits the first step to ``cap * (1 - gamma_start)`` when set.
    """

    norm: str = "rms"
    h_min: float = 1e-6
    degenerate_tol: float = 1e-12
    first_step_cap: float | None = None
    max_steps: int = 100_000

    def __post_init__(self):
        correction_norm(np.zeros((1, 1)), self.norm)
        if not self.h_min > 0:
            raise ConfigError("h_min must be positive")
        if self.first_step_cap is not None and not 0 < self.first_step_cap <= 1:
            raise ConfigError("first_step_cap must lie in (0, 1]")


def drbe_step_size(rho, gamma, r: float, opts: DrbeOptions = DrbeOptions(), first: bool = False):
    """Adaptive step ``min(1 - gamma, sqrt(r / rho))`` with the degenerate and floor rules."""
    rho = np.asarray(rho, dtype=float)
    remaining = 1.0 - np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        h = np.minimum(remaining, np.sqrt(r / rho))
    degenerate = rho <= opts.degenerate_tol
    if first and opts.first_step_cap is not None:
        h = np.minimum(h, opts.first_step_cap * remaining)
    h = np.where(degenerate, remaining, h)
    return np.minimum(np.maximum(h, opts.h_min), remaining)


def drbe_sample(field: FlowField, est: CorrectionEstimator, schedule: NoiseSchedule,
                r: float, x_init, opts: DrbeOptions = DrbeOptions(), seed: int | None = None):
    """Adaptive Euler sampler restricting the per-step backward error to ``r``.

    Each row starts at ``t = T`` and advances ``gamma <- gamma + h`` with
    ``h = min(1 - gamma, sqrt(r / rho(g)))``, where ``g`` is the correction term at the
    current state, until ``gamma = 1``. The flow evaluation used for the Euler step is
    reused inside the correction estimate.
    """
    if not r > 0:
        raise ConfigError(f"threshold r must be positive, got {r}")
    est.check_capabilities(field.predictor)
    x, single = _as_batch(x_init)
    n, d = x.shape
    T = schedule.horizon_T
    gam = np.full(n, schedule.gamma_T)
    t = np.full(n, T)
    active = np.ones(n, dtype=bool)
    nfe = np.zeros(n, dtype=int)
    n_steps = np.zeros(n, dtype=int)
    # full-batch snapshots after every step; finished rows simply stop changing
    hist_t, hist_g, hist_x = [t.copy()], [gam.copy()], [x.copy()]
    hist_h: list[np.ndarray] = []
    hist_c: list[np.ndarray] = []

    def build():
        ts, gs, xs = np.stack(hist_t), np.stack(hist_g), np.stack(hist_x)
        hs = np.stack(hist_h + [np.zeros(n)])
        cs = np.stack(hist_c + [np.full(n, np.nan)])
        out = []
        for i in range(n):
            m = n_steps[i] + 1
            h_i = hs[:m, i].copy()
            c_i = cs[:m, i].copy()
            h_i[-1], c_i[-1] = 0.0, np.nan
            out.append(Trajectory(ts[:m, i], gs[:m, i], xs[:m, i], h_i, c_i, int(nfe[i]), seed))
        return out

    step = 0
    while active.any():
        if step >= opts.max_steps:
            raise SolverDivergenceError(f"DRBE exceeded {opts.max_steps} steps", build())
        idx = np.flatnonzero(active)
        gi, xi = gam[idx], x[idx]
        calls0 = field.calls
        f = field.eval(gi, xi)
        g = est.correction(field, gi, xi, f=f)
        nfe[idx] += field.calls - calls0
        rho = correction_norm(g, opts.norm)
        h = drbe_step_size(rho, gi, r, opts, first=step == 0)
        x_new = xi + h[:, None] * f
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(rho))):
            raise SolverDivergenceError("non-finite state in DRBE", build())
        g_new = np.where(h >= 1.0 - gi, 1.0, gi + h)
        x[idx], gam[idx], t[idx] = x_new, g_new, schedule.t_inverse(g_new)
        h_full = np.zeros(n)
        c_full = np.full(n, np.nan)
        h_full[idx], c_full[idx] = h, rho
        hist_h.append(h_full)
        hist_c.append(c_full)
        hist_t.append(t.copy())
        hist_g.append(gam.copy())
        hist_x.append(x.copy())
        n_steps[idx] += 1
        active[idx] = g_new < 1.0
        step += 1
    return _finish(x, build(), single)


def rbe_sample(field: FlowField, schedule: NoiseSchedule, infsched: InferenceSchedule, x_init):
    """Explicit Euler in gamma over the knots of ``infsched``: exactly K evaluations."""
    x, single = _as_batch(x_init)
    gammas = infsched.gammas
    K = infsched.steps_K
    xs = np.empty((K + 1,) + x.shape)
    xs[0] = x
    for k in range(K):
        h = gammas[k + 1] - gammas[k]
        x = x + h * field.eval(gammas[k], x)
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError(
                "non-finite state in RBE sampler",
                _shared_trajectories(infsched.times[: k + 2], gammas[: k + 2],
                                     np.append(np.diff(gammas[: k + 2]), 0.0), xs[: k + 2], k + 1))
        xs[k + 1] = x
    hs = np.append(np.diff(gammas), 0.0)
    return _finish(x, _shared_trajectories(infsched.times, gammas, hs, xs, K), single)


def ddim_step(predictor, gamma_cur: float, gamma_next: float, x):
    eps = predictor.predict(gamma_cur, x)
    ratio = math.sqrt(gamma_next / gamma_cur)
    return ratio * x + (math.sqrt(1.0 - gamma_next) - ratio * math.sqrt(1.0 - gamma_cur)) * eps


def ddim_sample(predictor, schedule: NoiseSchedule, infsched: InferenceSchedule, x_init):
    """Deterministic DDIM over the knots of ``infsched``."""
    x, single = _as_batch(x_init)
    gammas = infsched.gammas
    K = infsched.steps_K
    xs = np.empty((K + 1,) + x.shape)
    xs[0] = x
    for k in range(K):
        x = ddim_step(predictor, gammas[k], gammas[k + 1], x)
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError("non-finite state in DDIM sampler")
        xs[k + 1] = x
    hs = np.append(np.diff(gammas), 0.0)
    return _finish(x, _shared_trajectories(infsched.times, gammas, hs, xs, K), single)


def ancestral_sample(predictor, schedule: NoiseSchedule, n_steps: int, x_init,
                     rng_seed: int, variance: str = "small"):
    """Stochastic DDPM reverse chain over ``n_steps`` uniform time steps.

    With ``n_steps = N`` this is the classical chain on the discrete grid; fewer steps
    use the respaced retention ``alpha = gamma_cur / gamma_next``. ``variance`` selects
    sigma^2: ``small`` (posterior), ``large`` (``1 - alpha``) or ``zero``.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ConfigError("n_steps must be a positive integer")
    if variance not in ("small", "large", "zero"):
        raise ConfigError(f"unknown ancestral variance {variance!r}")
    x, single = _as_batch(x_init)
    rng = np.random.default_rng(rng_seed)
    infsched = InferenceSchedule.uniform_time(schedule, n_steps)
    gammas = infsched.gammas
    xs = np.empty((n_steps + 1,) + x.shape)
    xs[0] = x
    for k in range(n_steps):
        g_cur, g_next = gammas[k], gammas[k + 1]
        alpha = g_cur / g_next
        eps = predictor.predict(g_cur, x)
        mean = (x - (1.0 - alpha) / math.sqrt(1.0 - g_cur) * eps) / math.sqrt(alpha)
        if variance == "small":
            var = (1.0 - g_next) / (1.0 - g_cur) * (1.0 - alpha)
        elif variance == "large":
            var = 1.0 - alpha
        else:
            var = 0.0
        z = rng.standard_normal(x.shape)
        x = mean + math.sqrt(var) * z
        if not np.all(np.isfinite(x)):
            raise SolverDivergenceError("non-finite state in ancestral sampler")
        xs[k + 1] = x
    hs = np.append(np.diff(gammas), 0.0)
    trajs = _shared_trajectories(infsched.times, gammas, hs, xs, n_steps)
    for tr in trajs:
        tr.seed = rng_seed
    return _finish(x, trajs, single)


def reference_solve(field: FlowField, schedule: NoiseSchedule, g_start: float, g_end: float,
                    x_init, n_fine: int = 100_000):
    """Classical RK4 transport of ``x_init`` from ``g_start`` to ``g_end``.

    Integrates in the angle ``theta`` with ``gamma = cos(theta)^2``, where
    ``dx/dtheta = (eps - sin(theta) x) / cos(theta)``. Both ``sqrt(gamma)`` and
    ``sqrt(1 - gamma)`` are smooth in theta, so neither end of the path is singular; the
    grid is uniform in theta.
    """
    if int(n_fine) != n_fine or n_fine < 1:
        raise ConfigError("n_fine must be a positive integer")
    lo = schedule.gamma_T
    for g in (g_start, g_end):
        if not (0 < g <= 1) or g < lo * (1 - 1e-12):
            raise DomainError(f"gamma must lie in [{lo}, 1], got {g}")
    x, single = _as_batch(x_init)
    if g_start == g_end:
        return x[0] if single else x
    pred = field.predictor

    def rhs(th, y):
        c, sn = math.cos(th), math.sin(th)
        field.calls += 1
        return (pred.predict(c * c, y) - sn * y) / c

    s0, s1 = math.acos(math.sqrt(g_start)), math.acos(math.sqrt(g_end))
    ds = (s1 - s0) / n_fine
    for k in range(n_fine):
        s = s0 + k * ds
        s_mid = s + 0.5 * ds
        s_next = s1 if k == n_fine - 1 else s + ds
        k1 = rhs(s, x)
        k2 = rhs(s_mid, x + 0.5 * ds * k1)
        k3 = rhs(s_mid, x + 0.5 * ds * k2)
        k4 = rhs(s_next, x + ds * k3)
        x = x + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise SolverDivergenceError("non-finite state in reference solve")
    return x[0] if single else x
