"""Command-line entry point: sample, learn-schedule, benchmark, inspect-schedule."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from .errors import (CalibrationError, ConfigError, DomainError, ScheduleFormatError,
                     ScheduleInstabilityError, SolverDivergenceError)
from .evaluation import BenchmarkConfig, run_benchmark
from .flow import FlowField
from .schedule_learning import (calibrate_threshold, compare_schedules, learn_rbe_schedule,
                                load_schedule, save_schedule)
from .solvers import (InferenceSchedule, ancestral_sample, ddim_sample, drbe_sample,
                      rbe_sample)

log = logging.getLogger("bea_sampler")


def _fmt(v) -> str:
    return repr(float(v))


def csv_text(header: list[str], rows) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _echo_config(out_dir: Path, cfg: dict) -> None:
    _write(out_dir / "resolved_config.json", C.dumps(cfg))


# -- overrides from flags --------------------------------------------------------

def _model_overrides(args, file_cfg: dict) -> dict | None:
    fields = {k: getattr(args, k, None) for k in ("dim", "var", "offset")}
    fields = {k: v for k, v in fields.items() if v is not None}
    if args.model is None and not fields:
        return None
    base = dict(file_cfg.get("model", C.DEFAULTS["model"]))
    if args.model is not None and args.model != base.get("kind", "gaussian"):
        base = {"kind": args.model, "dim": base.get("dim", C.DEFAULTS["model"]["dim"])}
    base.update(fields)
    return base


def _overrides(args, file_cfg: dict) -> dict:
    ov: dict = {}
    model = _model_overrides(args, file_cfg)
    if model is not None:
        ov["model"] = model
    if getattr(args, "noise_schedule", None):
        ns = dict(file_cfg.get("noise_schedule", {}))
        if ns.get("kind") != args.noise_schedule:
            ns = {"kind": args.noise_schedule}
        ov["noise_schedule"] = ns
    solver = {}
    for flag, key in (("solver", "kind"), ("K", "K"), ("r", "r"), ("schedule_file", "schedule_file"),
                      ("estimator", "estimator"), ("norm", "norm")):
        val = getattr(args, flag, None)
        if val is not None:
            solver[key] = val
    if solver:
        ov["solver"] = solver
    learn = {}
    if getattr(args, "target_k", None) is not None:
        learn["target_K"] = args.target_k
    if getattr(args, "seeds", None) is not None:
        learn["n_seeds"] = args.seeds
    if learn:
        ov["learn"] = learn
    bench = {}
    if getattr(args, "nfe", None):
        bench["nfe_list"] = args.nfe
    if getattr(args, "solvers", None):
        bench["solvers"] = args.solvers
    if bench:
        ov["benchmark"] = bench
    if getattr(args, "n", None) is not None:
        ov["n_samples"] = args.n
    if args.seed is not None:
        ov["seed"] = args.seed
    out = {}
    if getattr(args, "out", None) is not None:
        out["schedule_file" if args.command == "learn-schedule" else "dir"] = args.out
    if getattr(args, "n_trajectories", None) is not None:
        out["n_trajectories"] = args.n_trajectories
    if out:
        ov["output"] = out
    return ov


def resolve_args(args) -> dict:
    file_cfg = C.load_config_file(args.config) if args.config else {}
    return C.resolve(file_cfg, _overrides(args, file_cfg))


# -- commands --------------------------------------------------------------------

def _calibrated_r(cfg: dict, model, schedule, K: int) -> float:
    lcfg = C.build_learn_config(cfg, target_K=K)
    r, k = calibrate_threshold(lcfg, FlowField(model), schedule)
    print(f"calibrated r={r:.6g} (median steps {k})")
    return r


def cmd_sample(cfg: dict) -> int:
    model = C.build_model(cfg)
    schedule = C.build_noise_schedule(cfg)
    s = cfg["solver"]
    kind = s["kind"]
    n, seed = int(cfg["n_samples"]), int(cfg["seed"])
    x0 = np.random.default_rng(seed).standard_normal((n, model.dim))

    infsched = None
    if s["schedule_file"] is not None and kind in ("rbe", "ddim"):
        loaded = load_schedule(s["schedule_file"])
        if loaded.noise_schedule != schedule:
            log.warning("schedule file was learned under a different noise schedule; using its own")
            schedule = loaded.noise_schedule
        infsched = loaded.schedule
    if kind == "rbe":
        infsched = infsched or InferenceSchedule.uniform_gamma(schedule, int(s["K"]))
        x, trajs = rbe_sample(FlowField(model), schedule, infsched, x0)
    elif kind == "ddim":
        infsched = infsched or InferenceSchedule.uniform_time(schedule, int(s["K"]))
        x, trajs = ddim_sample(model, schedule, infsched, x0)
    elif kind == "drbe":
        r = s["r"] if s["r"] is not None else _calibrated_r(cfg, model, schedule, int(s["K"]))
        x, trajs = drbe_sample(FlowField(model), C.build_estimator(cfg), schedule, float(r), x0,
                               C.build_drbe_options(cfg), seed=seed)
    else:
        x, trajs = ancestral_sample(model, schedule, int(s["K"]), x0, seed,
                                    variance=s["ancestral_variance"])

    out_dir = Path(cfg["output"]["dir"])
    _write(out_dir / "samples.csv", csv_text([f"x_{j}" for j in range(model.dim)], x))
    for i, tr in enumerate(trajs[:int(cfg["output"]["n_trajectories"])]):
        _write(out_dir / "trajectories" / f"trajectory_{i:05d}.csv", tr.to_csv())
    _echo_config(out_dir, cfg)

    nfe = np.array([tr.nfe for tr in trajs])
    steps = np.array([tr.n_steps for tr in trajs])
    print(f"solver={kind} n={n} steps[min/median/max]={steps.min()}/{int(np.median(steps))}/{steps.max()} "
          f"nfe[min/median/max]={nfe.min()}/{int(np.median(nfe))}/{nfe.max()} total_nfe={nfe.sum()}")
    print(f"wrote {out_dir / 'samples.csv'}")
    return 0


def cmd_learn_schedule(cfg: dict) -> int:
    model = C.build_model(cfg)
    schedule = C.build_noise_schedule(cfg)
    lcfg = C.build_learn_config(cfg)
    field = FlowField(model)
    r = cfg["solver"]["r"]
    if r is None:
        r = _calibrated_r(cfg, model, schedule, lcfg.target_K)
    learned = learn_rbe_schedule(lcfg, field, schedule, float(r))
    path = Path(cfg["output"]["schedule_file"])
    path.parent.mkdir(parents=True, exist_ok=True)
    save_schedule(path, learned, schedule)
    _echo_config(path.parent, cfg)
    print(f"kept {learned.n_kept}/{learned.n_seeds} runs, discard rate {learned.discard_fraction:.3f}")
    print(f"length histogram {learned.length_histogram}")
    print(f"wrote {path} with {learned.schedule.steps_K + 1} knots")
    return 0


def cmd_benchmark(cfg: dict) -> int:
    model = C.build_model(cfg)
    schedule = C.build_noise_schedule(cfg)
    bench = cfg["benchmark"]
    bcfg = BenchmarkConfig(solvers=tuple(bench["solvers"]),
                           nfe_list=tuple(int(k) for k in bench["nfe_list"]),
                           n_samples=int(cfg["n_samples"]), seed=int(cfg["seed"]),
                           n_seeds_learn=int(cfg["learn"]["n_seeds"]),
                           estimator=C.build_estimator(cfg), drbe=C.build_drbe_options(cfg),
                           ancestral_variance=cfg["solver"]["ancestral_variance"],
                           oracle_n_fine=int(bench["oracle_n_fine"]))
    report = run_benchmark(model, schedule, bcfg, progress=print)
    out_dir = Path(cfg["output"]["dir"])
    _write(out_dir / "report.csv", report.to_csv())
    summary = {
        "n_rows": len(report.rows),
        "solvers": list(bcfg.solvers),
        "nfe_list": list(bcfg.nfe_list),
        "best_w2": {s: min((row.w2 for row in report.rows if row.solver == s and row.w2 == row.w2),
                           default=None) for s in bcfg.solvers},
    }
    _write(out_dir / "summary.json", json.dumps(summary, indent=2) + "\n")
    _echo_config(out_dir, cfg)
    print(f"wrote {out_dir / 'report.csv'} ({len(report.rows)} rows)")
    return 0


def cmd_inspect_schedule(path: str, grid_out: str | None = None, n_grid: int = 101) -> int:
    loaded = load_schedule(path)
    sched = loaded.schedule
    print(f"schedule {path}: K={sched.steps_K} provenance={sched.provenance.value}")
    print(f"{'i':>3}  {'t':>24}  {'gamma':>24}")
    for i, (t, g) in enumerate(zip(sched.times, sched.gammas)):
        print(f"{i:>3}  {_fmt(t):>24}  {_fmt(g):>24}")
    grid = compare_schedules(sched, loaded.noise_schedule, n_grid)
    out = Path(grid_out) if grid_out else Path(path).with_suffix(".grid.csv")
    _write(out, csv_text(["t", "gamma_rbe", "gamma_linear", "gamma_cosine"], grid))
    print(f"wrote {out}")
    return 0


# -- parser ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=("gaussian", "gmm"))
    p.add_argument("--dim", type=int)
    p.add_argument("--var", type=float, help="data variance (gaussian) or component variance (gmm)")
    p.add_argument("--offset", type=float, help="gmm component offset from the origin")
    p.add_argument("--noise-schedule", choices=("linear", "cosine"))
    p.add_argument("--estimator", choices=("analytic", "symmetric_jacobian_fd", "full_gradient_fd"))
    p.add_argument("--norm", choices=("rms", "l2", "linf"))
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bea-sampler",
                                     description="Backward-error-guided diffusion ODE sampling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw samples with one solver")
    _common(p)
    p.add_argument("--solver", choices=C.SOLVER_KINDS)
    p.add_argument("--schedule-file")
    p.add_argument("--K", "--k", dest="K", type=int, help="step count for fixed-grid solvers")
    p.add_argument("--r", type=float, help="DRBE threshold")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--n-trajectories", type=int)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("learn-schedule", help="calibrate r and learn an rbe schedule")
    _common(p)
    p.add_argument("--target-k", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--r", type=float, help="skip calibration and use this threshold")
    p.add_argument("--out", help="schedule file path")

    p = sub.add_parser("benchmark", help="solver x NFE grid")
    _common(p)
    p.add_argument("--nfe", type=int, nargs="+")
    p.add_argument("--solvers", nargs="+", choices=C.SOLVER_KINDS)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--seeds", type=int, help="DRBE runs per learned schedule")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("inspect-schedule", help="validate and print a schedule file")
    p.add_argument("path")
    p.add_argument("--grid-out", help="grid CSV path (default: next to the schedule)")
    p.add_argument("--n-grid", type=int, default=101)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect-schedule":
            return cmd_inspect_schedule(args.path, args.grid_out, args.n_grid)
        cfg = resolve_args(args)
        cmd = {"sample": cmd_sample, "learn-schedule": cmd_learn_schedule,
               "benchmark": cmd_benchmark}[args.command]
        return cmd(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ScheduleFormatError, CalibrationError, ScheduleInstabilityError,
            SolverDivergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
