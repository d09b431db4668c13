"""Learning a fixed inference schedule from adaptive DRBE runs.

The threshold ``r`` is calibrated so that DRBE's median step count over a probe batch
equals ``target_K``; DRBE is then run from ``n_seeds`` initial states, runs of length
``target_K`` are kept, and their visited times are averaged index by index.
"""

from __future__ import annotations

import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import (CalibrationError, ConfigError, ScheduleFormatError,
                     ScheduleInstabilityError)
from .flow import CorrectionEstimator, FlowField
from .noise_schedule import NoiseSchedule
from .parallel import map_chunks
from .solvers import DrbeOptions, InferenceSchedule, Provenance, Trajectory, drbe_sample

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScheduleLearnConfig:
    target_K: int = 10
    n_seeds: int = 64
    r_init: float = 1e-2
    r_lo: float = 1e-6
    r_hi: float = 1e2
    max_bisect_iters: int = 40
    n_probe: int | None = None
    seed: int = 0
    estimator: CorrectionEstimator = field(default_factory=CorrectionEstimator)
    drbe: DrbeOptions = field(default_factory=DrbeOptions)

    def __post_init__(self):
        if self.target_K < 1:
            raise ConfigError("target_K must be at least 1")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be at least 1")
        if not 0 < self.r_lo < self.r_hi:
            raise ConfigError("calibration bounds need 0 < r_lo < r_hi")
        if self.max_bisect_iters < 1:
            raise ConfigError("max_bisect_iters must be at least 1")

    def initial_states(self, dim: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.standard_normal((self.n_seeds, dim))

    def probe_states(self, dim: int) -> np.ndarray:
        n = self.n_seeds if self.n_probe is None else min(self.n_probe, self.n_seeds)
        return self.initial_states(dim)[:n]


def _run_drbe(field: FlowField, cfg: ScheduleLearnConfig, schedule: NoiseSchedule,
              r: float, x0: np.ndarray) -> list[Trajectory]:
    def run(chunk):
        _, trajs = drbe_sample(FlowField(field.predictor), cfg.estimator, schedule, r,
                               chunk, cfg.drbe, seed=cfg.seed)
        return trajs

    return [tr for part in map_chunks(run, x0) for tr in part]


def step_counts(field: FlowField, cfg: ScheduleLearnConfig, schedule: NoiseSchedule,
                r: float, x0: np.ndarray) -> list[int]:
    return [tr.n_steps for tr in _run_drbe(field, cfg, schedule, r, x0)]


def calibrate_threshold(cfg: ScheduleLearnConfig, field: FlowField,
                        schedule: NoiseSchedule) -> tuple[float, int]:
    """Threshold ``r`` whose median DRBE step count equals ``cfg.target_K``.

    Bisects on ``log r`` to find one such ``r``, then bisects towards both ends of the
    interval sharing that median and returns its geometric midpoint, which keeps the
    modal run length away from a jump.
    """
    x0 = cfg.probe_states(field.dim)
    target = cfg.target_K
    cache: dict[float, int] = {}

    def median_k(r):
        if r not in cache:
            cache[r] = statistics.median_low(step_counts(field, cfg, schedule, r, x0))
        return cache[r]

    def unreachable(reason):
        k_lo, k_hi = median_k(cfg.r_lo), median_k(cfg.r_hi)
        return CalibrationError(
            f"target_K={target} {reason}: median step counts span [{k_hi}, {k_lo}] "
            f"over r in [{cfg.r_lo}, {cfg.r_hi}]", (k_hi, k_lo))

    lo, hi = math.log(cfg.r_lo), math.log(cfg.r_hi)
    mid = math.log(cfg.r_init) if cfg.r_lo < cfg.r_init < cfg.r_hi else 0.5 * (lo + hi)
    found = None
    for _ in range(cfg.max_bisect_iters):
        k = median_k(math.exp(mid))
        if k == target:
            found = mid
            break
        if k > target:
            lo = mid
        else:
            hi = mid
        mid = 0.5 * (lo + hi)
    if found is None:
        for bound in (cfg.r_lo, cfg.r_hi):
            if median_k(bound) == target:
                return bound, target
        raise unreachable("not reached by bisection")

    def edge(inside, outside):
        # log-r resolution of 2%
        while abs(outside - inside) > 0.02:
            m = 0.5 * (inside + outside)
            if median_k(math.exp(m)) == target:
                inside = m
            else:
                outside = m
        return inside

    r_star = math.exp(0.5 * (edge(found, lo) + edge(found, hi)))
    if median_k(r_star) != target:
        r_star = math.exp(found)
    return r_star, median_k(r_star)


@dataclass(eq=False)
class LearnedSchedule:
    schedule: InferenceSchedule
    threshold_r: float
    target_K: int
    n_seeds: int
    n_kept: int
    length_histogram: dict[int, int]
    runs: list[Trajectory]

    @property
    def discard_fraction(self) -> float:
        return 1.0 - self.n_kept / self.n_seeds


def average_schedules(times_list: list[np.ndarray], horizon_T: float) -> np.ndarray:
    """Index-wise mean of equal-length time lists, re-anchored at ``T`` and ``0``."""
    times = np.mean(np.stack(times_list), axis=0)
    times[0], times[-1] = horizon_T, 0.0
    return times


def learn_rbe_schedule(cfg: ScheduleLearnConfig, field: FlowField, schedule: NoiseSchedule,
                       r: float) -> LearnedSchedule:
    x0 = cfg.initial_states(field.dim)
    runs = _run_drbe(field, cfg, schedule, r, x0)
    hist = dict(sorted(Counter(tr.n_steps for tr in runs).items()))
    kept = [tr for tr in runs if tr.n_steps == cfg.target_K]
    if 2 * len(kept) < len(runs):
        raise ScheduleInstabilityError(
            f"only {len(kept)}/{len(runs)} DRBE runs have {cfg.target_K} steps; "
            f"length histogram {hist}", hist)
    times = average_schedules([tr.times for tr in kept], schedule.horizon_T)
    infsched = InferenceSchedule.from_times(schedule, times, Provenance.RBE)
    return LearnedSchedule(infsched, r, cfg.target_K, len(runs), len(kept), hist, runs)


def compare_schedules(sched: InferenceSchedule, schedule: NoiseSchedule,
                      n_grid: int = 101) -> np.ndarray:
    """Table of ``(t, gamma_rbe, gamma_linear, gamma_cosine)`` on a uniform t-grid.

    ``gamma_rbe`` interpolates the schedule knots monotonically (PCHIP); the linear and
    cosine columns use the default schedules on the same horizon.
    """
    if n_grid < 2:
        raise ConfigError("n_grid must be at least 2")
    T = schedule.horizon_T
    t = np.linspace(0.0, T, n_grid)
    t[-1] = T
    knots_t = sched.times[::-1]
    knots_g = sched.gammas[::-1]
    rbe = PchipInterpolator(knots_t, knots_g)(t)
    lin = NoiseSchedule.linear(horizon_T=T).gamma(t)
    cos = NoiseSchedule.cosine(horizon_T=T).gamma(t)
    return np.column_stack([t, rbe, lin, cos])


# -- schedule file -------------------------------------------------------------

def _fmt17(v: float) -> str:
    return format(float(v), ".16e")


def dumps_schedule(learned: LearnedSchedule, noise_schedule: NoiseSchedule) -> str:
    """Serialize to the versioned JSON schedule document (times with 17 significant digits)."""
    doc = {
        "format_version": FORMAT_VERSION,
        "noise_schedule": noise_schedule.to_dict(),
        "provenance": learned.schedule.provenance.value,
        "target_K": learned.target_K,
        "threshold_r": "@R@",
        "n_seeds": learned.n_seeds,
        "n_kept": learned.n_kept,
        "times": "@TIMES@",
        "gammas": "@GAMMAS@",
    }
    text = json.dumps(doc, indent=2)
    text = text.replace('"@R@"', _fmt17(learned.threshold_r))
    text = text.replace('"@TIMES@"', "[" + ", ".join(_fmt17(v) for v in learned.schedule.times) + "]")
    text = text.replace('"@GAMMAS@"', "[" + ", ".join(_fmt17(v) for v in learned.schedule.gammas) + "]")
    return text + "\n"


def save_schedule(path: str | Path, learned: LearnedSchedule, noise_schedule: NoiseSchedule) -> None:
    Path(path).write_text(dumps_schedule(learned, noise_schedule))


@dataclass(frozen=True, eq=False)
class ScheduleFile:
    schedule: InferenceSchedule
    noise_schedule: NoiseSchedule
    meta: dict[str, Any]


_REQUIRED_KEYS = {"format_version", "noise_schedule", "provenance", "times", "gammas"}


def loads_schedule(text: str) -> ScheduleFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleFormatError(f"schedule file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScheduleFormatError("schedule file must hold a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ScheduleFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    missing = _REQUIRED_KEYS - set(doc)
    if missing:
        raise ScheduleFormatError(f"schedule file lacks fields {sorted(missing)}")
    try:
        noise = NoiseSchedule.from_dict(doc["noise_schedule"])
        times = np.asarray(doc["times"], dtype=float)
        gammas = np.asarray(doc["gammas"], dtype=float)
    except (ValueError, TypeError, KeyError) as exc:
        raise ScheduleFormatError(f"malformed schedule file: {exc}") from exc
    if times.ndim != 1 or times.shape != gammas.shape or len(times) < 2:
        raise ScheduleFormatError("times and gammas must be equal-length lists of at least two knots")
    if np.any(np.diff(times) >= 0) or np.any(np.diff(gammas) <= 0):
        raise ScheduleFormatError("monotonicity violation: times must decrease and gammas increase")
    if times[0] != noise.horizon_T or times[-1] != 0.0 or gammas[-1] != 1.0:
        raise ScheduleFormatError("schedule must be anchored at t_1 = T and t_{K+1} = 0 (gamma = 1)")
    if "target_K" in doc and doc["target_K"] != len(times) - 1:
        raise ScheduleFormatError(f"target_K={doc['target_K']} disagrees with {len(times)} knots")
    try:
        provenance = Provenance(doc["provenance"])
        infsched = InferenceSchedule(times, gammas, provenance)
    except (ValueError, ConfigError) as exc:
        raise ScheduleFormatError(str(exc)) from exc
    meta = {k: v for k, v in doc.items() if k not in ("times", "gammas", "noise_schedule")}
    return ScheduleFile(infsched, noise, meta)


def load_schedule(path: str | Path) -> ScheduleFile:
    return loads_schedule(Path(path).read_text())
