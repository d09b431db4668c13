"""Backward-error-guided step selection for diffusion probability-flow ODEs."""

from .errors import (CalibrationError, ConfigError, DomainError, ScheduleFormatError,
                     ScheduleInstabilityError, SolverDivergenceError)
from .evaluation import (BenchmarkConfig, BenchmarkReport, convergence_order, endpoint_rmse,
                         gaussian_w2, run_benchmark, sliced_w2)
from .flow import CorrectionEstimator, CorrectionMethod, FlowField, correction_term, flow
from .models import GaussianModel, GmmModel, gaussian_exact_solution, gmm_predict
from .noise_schedule import NoiseSchedule, ScheduleKind
from .schedule_learning import (ScheduleLearnConfig, calibrate_threshold, learn_rbe_schedule,
                                load_schedule, save_schedule)
from .solvers import (DrbeOptions, InferenceSchedule, Provenance, Trajectory, ancestral_sample,
                      ddim_sample, drbe_sample, rbe_sample, reference_solve)

__version__ = "0.1.0"
