"""Acceptance suite: one test per criterion, each recording a pass/fail line."""

import time

import numpy as np
import pytest
from conftest import record

from bea_sampler import (BenchmarkConfig, CorrectionEstimator, DrbeOptions, FlowField,
                         GaussianModel, GmmModel, InferenceSchedule, NoiseSchedule,
                         ScheduleLearnConfig, calibrate_threshold, correction_term, drbe_sample,
                         gaussian_w2, learn_rbe_schedule, rbe_sample, reference_solve,
                         run_benchmark, sliced_w2)
from bea_sampler.evaluation import empirical_moments, endpoint_rmse
from bea_sampler.schedule_learning import dumps_schedule
from bea_sampler.solvers import correction_norm, ddim_sample, drbe_step_size

NS = NoiseSchedule.linear()
METHODS = ("analytic", "full_gradient_fd", "symmetric_jacobian_fd")


class CountingPredictor:
    """Wraps a model and counts predict() calls; hides closed-form flow shortcuts."""

    def __init__(self, model):
        self.model = model
        self.dim = model.dim
        self.has_analytic_flow_derivatives = False
        self.is_gradient_field = True
        self.count = 0

    def predict(self, gamma, x):
        self.count += 1
        return self.model.predict(gamma, x)


def test_criterion_1_stationary_flow():
    t0 = time.perf_counter()
    m = GaussianModel.isotropic(3, 1.0)
    field = FlowField(m)
    x0 = np.random.default_rng(0).standard_normal((16, 3))
    flow_max = max(np.abs(field(g, x0)).max() for g in (0.01, 0.5, 0.99))
    x_rbe, _ = rbe_sample(field, NS, InferenceSchedule.uniform_gamma(NS, 10), x0)
    x_drbe, trajs = drbe_sample(FlowField(m), CorrectionEstimator(), NS, 1e-3, x0)
    err = max(np.abs(x_rbe - x0).max(), np.abs(x_drbe - x0).max())
    steps = {tr.n_steps for tr in trajs}
    dt = time.perf_counter() - t0
    ok = flow_max == 0.0 and err <= 1e-12 and steps == {1} and dt < 1.0
    assert record(1, ok, f"max|f|={flow_max:.1e} max|x-x0|={err:.1e} drbe steps={steps} t={dt:.2f}s")


def test_criterion_2_correction_estimators_agree():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for var in (0.25, 4.0):
        for d in (1, 8):
            field = FlowField(GaussianModel.isotropic(d, var))
            for _ in range(100):
                g = rng.uniform(0.05, 0.95)
                x = rng.standard_normal(d) * np.sqrt(var)
                vals = [correction_term(CorrectionEstimator(mth), field, g, x) for mth in METHODS]
                ref = np.linalg.norm(vals[0])
                for v in vals[1:]:
                    worst = max(worst, np.linalg.norm(v - vals[0]) / ref)
    dt = time.perf_counter() - t0
    assert record(2, worst <= 1e-4 and dt < 10, f"max relative disagreement {worst:.2e} t={dt:.2f}s")


def test_criterion_3_backward_error_leading_term():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    est = CorrectionEstimator("analytic")
    ratios = []
    for i in range(100):
        m = GaussianModel.isotropic(1, (0.25, 4.0)[i % 2])
        field = FlowField(m)
        g = rng.uniform(0.1, 0.8)
        x = rng.standard_normal(1) * 2
        f = field(g, x)
        corr = correction_term(est, field, g, x)

        def residual(h):
            gap = m.exact_solution(g, x, g + h) - (x + h * f)
            return (gap - 0.5 * h * h * corr)[0]

        h = 0.02
        ratios.append(residual(h) / residual(h / 2))
    lo, hi = min(ratios), max(ratios)
    dt = time.perf_counter() - t0
    assert record(3, 6 <= lo and hi <= 10 and dt < 10,
                  f"residual ratio range [{lo:.3f}, {hi:.3f}] t={dt:.2f}s")


def test_criterion_4_step_size_law():
    t0 = time.perf_counter()
    m = GaussianModel.isotropic(1, 4.0)
    worked = float(drbe_step_size(
        correction_norm(correction_term(CorrectionEstimator("analytic"), FlowField(m), 0.5,
                                        np.array([[1.0]])), "rms")[0], 0.5, 0.0036))
    r = 0.0036
    worst = 0.0
    n_checked = 0
    x0 = np.random.default_rng(4).standard_normal((32, 1))
    for method in ("analytic", "symmetric_jacobian_fd"):
        est = CorrectionEstimator(method)
        _, trajs = drbe_sample(FlowField(m), est, NS, r, x0)
        for tr in trajs:
            for rec in list(tr.records)[:-1]:
                g = est.correction(FlowField(m), rec.gamma, rec.x[None])
                rho = correction_norm(g, "rms")[0]
                expect = min(1 - rec.gamma, np.sqrt(r / rho))
                worst = max(worst, abs(rec.h_gamma - expect) / expect)
                n_checked += 1
    dt = time.perf_counter() - t0
    ok = abs(worked - 0.1) <= 1e-12 and worst <= 1e-12 and dt < 5
    assert record(4, ok, f"worked h={worked!r} max rel deviation {worst:.1e} over {n_checked} steps t={dt:.2f}s")


def _errors(solver, model, K_list, x0):
    exact = model.exact_solution(NS.gamma_T, x0, 1.0)
    out = []
    for K in K_list:
        if solver == "rbe":
            x, _ = rbe_sample(FlowField(model), NS, InferenceSchedule.uniform_gamma(NS, K), x0)
        elif solver == "ddim":
            x, _ = ddim_sample(model, NS, InferenceSchedule.uniform_time(NS, K), x0)
        else:
            x = reference_solve(FlowField(model), NS, NS.gamma_T, 1.0, x0, K)
        out.append(endpoint_rmse(x, exact))
    return np.array(out)


def test_criterion_5_convergence_orders():
    t0 = time.perf_counter()
    x0 = np.random.default_rng(5).standard_normal((64, 2))
    K_list = [16, 32, 64, 128]
    ratios = []
    for var in (0.25, 4.0):
        m = GaussianModel.isotropic(2, var)
        for solver in ("rbe", "ddim"):
            e = _errors(solver, m, K_list, x0)
            ratios.extend(e[:-1] / e[1:])
    orders = []
    for var in (0.25, 4.0):
        e = _errors("reference", GaussianModel.isotropic(2, var), [8, 16, 32, 64], x0)
        orders.append(np.polyfit(np.log(1.0 / np.array([8, 16, 32, 64])), np.log(e), 1)[0])
    dt = time.perf_counter() - t0
    ok = (1.8 <= min(ratios) and max(ratios) <= 2.2
          and all(3.5 <= p <= 4.5 for p in orders) and dt < 30)
    assert record(5, ok, f"K-doubling ratios [{min(ratios):.3f}, {max(ratios):.3f}] "
                         f"reference orders {[round(float(p), 3) for p in orders]} t={dt:.2f}s")


def test_criterion_6_distributional_endpoint():
    t0 = time.perf_counter()
    # schedule learned where DRBE run lengths concentrate; the per-coordinate flow is identical
    big = GaussianModel.isotropic(256, 4.0)
    cfg = ScheduleLearnConfig(target_K=20, n_seeds=64, seed=0)
    r, _ = calibrate_threshold(cfg, FlowField(big), NS)
    sched = learn_rbe_schedule(cfg, FlowField(big), NS, r).schedule
    m = GaussianModel.isotropic(1, 4.0)
    x0 = np.random.default_rng(6).standard_normal((10_000, 1))
    x, _ = rbe_sample(FlowField(m), NS, sched, x0)
    mom = empirical_moments(x)
    w2 = gaussian_w2(mom.mean, mom.var, m.mean, m.cov_diag)

    gmm = GmmModel.symmetric_pair(2)
    gcfg = ScheduleLearnConfig(target_K=20, n_seeds=64, seed=0)
    gr, _ = calibrate_threshold(gcfg, FlowField(gmm), NS)
    xg0 = np.random.default_rng(7).standard_normal((10_000, 2))
    xg, _ = drbe_sample(FlowField(gmm), CorrectionEstimator(), NS, gr, xg0)
    sw = sliced_w2(xg, gmm.sample, seed=0)
    floor = sliced_w2(gmm.sample(10_000, np.random.default_rng(8)), gmm.sample, seed=0)
    dt = time.perf_counter() - t0
    ok = w2 <= 0.1 and sw <= 2 * floor and dt < 120
    assert record(6, ok, f"gaussian w2={w2:.4f} gmm sliced w2={sw:.4f} floor={floor:.4f} t={dt:.1f}s")


def _learn(model, K):
    cfg = ScheduleLearnConfig(target_K=K, n_seeds=64, seed=0)
    r, k = calibrate_threshold(cfg, FlowField(model), NS)
    return k, learn_rbe_schedule(cfg, FlowField(model), NS, r)


def test_criterion_7_schedule_learning():
    t0 = time.perf_counter()
    models = {"gaussian d=256": GaussianModel.isotropic(256, 4.0),
              "gmm d=1024": GmmModel.symmetric_pair(1024)}
    problems, discards = [], {}
    for name, model in models.items():
        for K in (8, 10, 12, 15, 20):
            k, learned = _learn(model, K)
            s = learned.schedule
            discards[f"{name} K={K}"] = round(learned.discard_fraction, 3)
            if k != K:
                problems.append(f"{name} K={K}: median {k}")
            if learned.discard_fraction >= 0.5:
                problems.append(f"{name} K={K}: discard {learned.discard_fraction:.2f}")
            if not (len(s.times) == K + 1 and s.times[0] == NS.horizon_T and s.times[-1] == 0.0
                    and np.all(np.diff(s.times) < 0) and np.all(np.diff(s.gammas) > 0)):
                problems.append(f"{name} K={K}: bad schedule")
        _, a = _learn(model, 8)
        _, b = _learn(model, 8)
        if dumps_schedule(a, NS) != dumps_schedule(b, NS):
            problems.append(f"{name}: rerun differs")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 120
    assert record(7, ok, f"max discard {max(discards.values()):.3f} t={dt:.1f}s {problems or ''}")


def test_criterion_8_nfe_discipline():
    pred = CountingPredictor(GaussianModel.isotropic(4, 4.0))
    x0 = np.random.default_rng(8).standard_normal((10, 4))
    _, trajs = rbe_sample(FlowField(pred), NS, InferenceSchedule.uniform_gamma(NS, 8), x0)
    ok = pred.count == 8 and all(tr.nfe == 8 for tr in trajs)
    assert record(8, ok, f"predictor calls={pred.count} reported nfe={trajs[0].nfe}")


def test_criterion_9_oracle_cross_validation():
    t0 = time.perf_counter()
    m = GaussianModel(np.array([0.5, -1.0, 2.0]), np.array([0.25, 1.0, 4.0]))
    x0 = np.random.default_rng(9).standard_normal((8, 3))
    ref = reference_solve(FlowField(m), NS, NS.gamma_T, 1.0, x0, n_fine=100_000)
    err = np.abs(ref - m.exact_solution(NS.gamma_T, x0, 1.0)).max()
    dt = time.perf_counter() - t0
    assert record(9, err <= 1e-8 and dt < 10, f"max |exact - reference| = {err:.2e} t={dt:.2f}s")


def test_criterion_10_benchmark_comparison():
    model = GaussianModel.isotropic(256, 4.0)
    cfg = BenchmarkConfig(nfe_list=(8,), n_samples=2000, seed=0)
    report = run_benchmark(model, NS, cfg)
    w2 = {row.solver: row.w2 for row in report.rows}
    ok = max(w2["rbe"], w2["drbe"]) <= min(w2["ddim"], w2["ancestral"])
    assert record(10, ok, "w2 at NFE=8: " + " ".join(f"{k}={v:.3f}" for k, v in w2.items()))
