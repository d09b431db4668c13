"""Accuracy and sample-quality metrics against analytic targets, plus the benchmark grid."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ScheduleInstabilityError
from .flow import CorrectionEstimator, FlowField
from .models import GaussianModel, GmmModel
from .noise_schedule import NoiseSchedule
from .solvers import (DrbeOptions, InferenceSchedule, ancestral_sample, ddim_sample,
                      drbe_sample, rbe_sample, reference_solve)

EXACT = "exact"

log = logging.getLogger(__name__)


def endpoint_rmse(samples_final, oracle_final) -> float:
    """Root mean square over pairs of ``||x_solver - x_oracle||_2 / sqrt(d)``."""
    a = np.atleast_2d(np.asarray(samples_final, dtype=float))
    b = np.atleast_2d(np.asarray(oracle_final, dtype=float))
    if a.shape != b.shape:
        raise ValueError(f"paired sample sets differ in shape: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def gaussian_w2(mean_a, cov_diag_a, mean_b, cov_diag_b) -> float:
    """Closed-form 2-Wasserstein distance between two diagonal Gaussians."""
    va = np.asarray(cov_diag_a, dtype=float)
    vb = np.asarray(cov_diag_b, dtype=float)
    if np.any(va <= 0) or np.any(vb <= 0):
        raise ValueError("variances must be positive")
    dm = np.asarray(mean_a, dtype=float) - np.asarray(mean_b, dtype=float)
    return float(np.sqrt(np.sum(dm * dm) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)))


@dataclass(frozen=True)
class Moments:
    mean: np.ndarray
    var: np.ndarray
    max_abs_offdiag: float


def empirical_moments(samples) -> Moments:
    """Sample mean, unbiased diagonal variance, and the largest off-diagonal covariance."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two samples")
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    off = cov - np.diag(np.diag(cov))
    return Moments(x.mean(axis=0), np.diag(cov).copy(), float(np.max(np.abs(off))))


def _w2_1d(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.sort(a), np.sort(b)
    if len(a) != len(b):
        q = (np.arange(max(len(a), len(b))) + 0.5) / max(len(a), len(b))
        a, b = np.quantile(a, q), np.quantile(b, q)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def sliced_w2_between(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """Mean over random unit directions of the 1-D W2 distance between projections."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sample sets must be non-empty")
    if n_projections < 16:
        raise ConfigError("n_projections must be at least 16")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa, pb = a @ dirs.T, b @ dirs.T
    return float(np.mean([_w2_1d(pa[:, j], pb[:, j]) for j in range(n_projections)]))


def sliced_w2(samples, target_sampler: Callable[[int, np.random.Generator], np.ndarray],
              n_projections: int = 64, seed: int = 0) -> float:
    """Sliced W2 between ``samples`` and an equally sized draw from ``target_sampler``.

    ``target_sampler(n, rng)`` must return ``n`` target samples; the draw and the
    projection directions are both derived from ``seed``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(samples) == 0:
        raise ValueError("sample set must be non-empty")
    rng = np.random.default_rng([seed, 1])
    target = target_sampler(len(samples), rng)
    return sliced_w2_between(samples, target, n_projections, seed)


def fit_order(K_list: Sequence[int], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(1/K)``."""
    K = np.asarray(K_list, dtype=float)
    e = np.asarray(errors, dtype=float)
    slope = np.polyfit(np.log(1.0 / K), np.log(e), 1)[0]
    return float(slope)


def convergence_order(solver: str, model: GaussianModel, K_list: Sequence[int],
                      schedule: NoiseSchedule | None = None, n_states: int = 64,
                      seed: int = 0, atol: float = 1e-13):
    """Empirical order of ``solver`` (``rbe``, ``ddim`` or ``reference``) against the
    closed-form Gaussian transport from ``gamma(T)`` to 1.

    ``rbe`` uses a uniform-gamma grid, ``ddim`` a uniform-time grid, and
    ``reference`` treats each K as its RK4 step count. Returns :data:`EXACT` when every
    error is below ``atol``.
    """
    if len(K_list) < 3:
        raise ConfigError("K_list needs at least three entries")
    ratios = np.asarray(K_list[1:], float) / np.asarray(K_list[:-1], float)
    if not np.allclose(ratios, ratios[0]) or ratios[0] <= 1:
        raise ConfigError("K_list must be an increasing geometric sequence")
    schedule = schedule or NoiseSchedule.linear()
    x0 = np.random.default_rng(seed).standard_normal((n_states, model.dim))
    gT = schedule.gamma_T
    exact = model.exact_solution(gT, x0, 1.0)
    field = FlowField(model)
    errors = []
    for K in K_list:
        if solver == "rbe":
            x, _ = rbe_sample(field, schedule, InferenceSchedule.uniform_gamma(schedule, K), x0)
        elif solver == "ddim":
            x, _ = ddim_sample(model, schedule, InferenceSchedule.uniform_time(schedule, K), x0)
        elif solver == "reference":
            x = reference_solve(field, schedule, gT, 1.0, x0, K)
        else:
            raise ConfigError(f"unknown solver {solver!r}")
        errors.append(endpoint_rmse(x, exact))
    if max(errors) < atol:
        return EXACT
    return fit_order(K_list, errors)


# -- benchmark -----------------------------------------------------------------

REPORT_COLUMNS = ["solver", "K", "nfe", "endpoint_rmse", "w2", "mean_err", "cov_err",
                  "wall_time_ms", "n_samples", "seed"]


@dataclass
class BenchmarkRow:
    solver: str
    K: int
    nfe: int
    endpoint_rmse: float
    w2: float
    mean_err: float
    cov_err: float
    wall_time_ms: float
    n_samples: int
    seed: int


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows:
            values = asdict(row)
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in (values[c] for c in REPORT_COLUMNS)])
        return buf.getvalue()

    def find(self, solver: str, K: int) -> BenchmarkRow:
        for row in self.rows:
            if row.solver == solver and row.K == K:
                return row
        raise KeyError((solver, K))


def target_moments(model) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, GaussianModel):
        return model.mean, model.cov_diag
    w = model.weights[:, None]
    mean = np.sum(w * model.means, axis=0)
    second = np.sum(w * (model.cov_diags + model.means ** 2), axis=0)
    return mean, second - mean ** 2


def oracle_endpoints(model, schedule: NoiseSchedule, x0: np.ndarray, n_fine: int = 10_000):
    """ODE endpoints from ``gamma(T)``: closed form for Gaussians, fine RK4 otherwise."""
    if isinstance(model, GaussianModel):
        return model.exact_solution(schedule.gamma_T, x0, 1.0)
    return reference_solve(FlowField(model), schedule, schedule.gamma_T, 1.0, x0, n_fine)


def distribution_metrics(model, samples: np.ndarray, seed: int) -> tuple[float, float, float]:
    """``(w2, mean_err, cov_err)`` of ``samples`` against the model's data distribution.

    Gaussian targets use the closed-form W2 of the empirical diagonal moments; mixtures
    use sliced W2 against a fresh target draw.
    """
    mom = empirical_moments(samples)
    t_mean, t_var = target_moments(model)
    if isinstance(model, GaussianModel):
        w2 = gaussian_w2(mom.mean, mom.var, t_mean, t_var)
    else:
        w2 = sliced_w2(samples, model.sample, seed=seed)
    mean_err = float(np.linalg.norm(mom.mean - t_mean))
    cov_err = float(np.linalg.norm(mom.var - t_var))
    return w2, mean_err, cov_err


@dataclass(frozen=True)
class BenchmarkConfig:
    solvers: tuple[str, ...] = ("rbe", "drbe", "ddim", "ancestral")
    nfe_list: tuple[int, ...] = (8, 10, 12, 15, 20)
    n_samples: int = 1000
    seed: int = 0
    n_seeds_learn: int = 64
    estimator: CorrectionEstimator = field(default_factory=CorrectionEstimator)
    drbe: DrbeOptions = field(default_factory=DrbeOptions)
    ancestral_variance: str = "small"
    oracle_n_fine: int = 10_000

    def __post_init__(self):
        unknown = set(self.solvers) - {"rbe", "drbe", "ddim", "ancestral"}
        if unknown:
            raise ConfigError(f"unknown benchmark solvers {sorted(unknown)}")
        if self.n_samples < 2:
            raise ConfigError("benchmark needs at least two samples")


def run_benchmark(model, schedule: NoiseSchedule, cfg: BenchmarkConfig = BenchmarkConfig(),
                  progress: Callable[[str], None] | None = None) -> BenchmarkReport:
    """Run every solver at every step budget from one shared batch of initial states."""
    from .schedule_learning import ScheduleLearnConfig, calibrate_threshold, learn_rbe_schedule

    x0 = np.random.default_rng(cfg.seed).standard_normal((cfg.n_samples, model.dim))
    oracle = oracle_endpoints(model, schedule, x0, cfg.oracle_n_fine)
    report = BenchmarkReport()
    for K in cfg.nfe_list:
        thresholds: dict[str, float] = {}
        for solver in cfg.solvers:
            field_ = FlowField(model)
            t0 = time.perf_counter()
            if solver in ("rbe", "drbe"):
                if "r" not in thresholds:
                    lcfg = ScheduleLearnConfig(target_K=K, n_seeds=cfg.n_seeds_learn,
                                               seed=cfg.seed + 1, estimator=cfg.estimator,
                                               drbe=cfg.drbe)
                    thresholds["r"], _ = calibrate_threshold(lcfg, FlowField(model), schedule)
                    thresholds["cfg"] = lcfg
                r = thresholds["r"]
                if solver == "rbe":
                    try:
                        learned = learn_rbe_schedule(thresholds["cfg"], FlowField(model), schedule, r)
                    except ScheduleInstabilityError as exc:
                        log.warning("rbe K=%d skipped: %s", K, exc)
                        nan = float("nan")
                        report.rows.append(BenchmarkRow(solver, K, 0, nan, nan, nan, nan, nan,
                                                        cfg.n_samples, cfg.seed))
                        continue
                    t0 = time.perf_counter()
                    x, trajs = rbe_sample(field_, schedule, learned.schedule, x0)
                    nfe, steps = trajs[0].nfe, K
                else:
                    x, trajs = drbe_sample(field_, cfg.estimator, schedule, r, x0, cfg.drbe,
                                           seed=cfg.seed)
                    nfe = int(np.median([tr.nfe for tr in trajs]))
                    steps = int(np.median([tr.n_steps for tr in trajs]))
                endpoint = endpoint_rmse(x, oracle)
            elif solver == "ddim":
                x, trajs = ddim_sample(model, schedule, InferenceSchedule.uniform_time(schedule, K), x0)
                nfe, steps = trajs[0].nfe, K
                endpoint = endpoint_rmse(x, oracle)
            else:
                x, trajs = ancestral_sample(model, schedule, K, x0, cfg.seed,
                                            variance=cfg.ancestral_variance)
                nfe, steps = trajs[0].nfe, K
                # stochastic chain: no paired ODE endpoint
                endpoint = float("nan")
            wall = (time.perf_counter() - t0) * 1e3
            w2, mean_err, cov_err = distribution_metrics(model, x, cfg.seed)
            row = BenchmarkRow(solver, steps, nfe, endpoint, w2, mean_err, cov_err, wall,
                               cfg.n_samples, cfg.seed)
            report.rows.append(row)
            if progress:
                progress(f"{solver:>9s} K={steps:<4d} nfe={nfe:<5d} w2={w2:.4g}")
    return report
