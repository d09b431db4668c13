import json

import numpy as np
import pytest

from bea_sampler import (FlowField, GaussianModel, InferenceSchedule, NoiseSchedule,
                         ScheduleLearnConfig, calibrate_threshold, learn_rbe_schedule,
                         load_schedule, rbe_sample, save_schedule)
from bea_sampler.errors import CalibrationError, ScheduleFormatError, ScheduleInstabilityError
from bea_sampler.schedule_learning import (average_schedules, compare_schedules, dumps_schedule,
                                           loads_schedule)

NS = NoiseSchedule.linear()
MODEL = GaussianModel.isotropic(64, 4.0)


@pytest.fixture(scope="module")
def learned():
    cfg = ScheduleLearnConfig(target_K=8, n_seeds=64, seed=0)
    r, k = calibrate_threshold(cfg, FlowField(MODEL), NS)
    assert k == 8
    return learn_rbe_schedule(cfg, FlowField(MODEL), NS, r)


def test_learned_schedule_shape(learned):
    s = learned.schedule
    assert s.steps_K == 8 and len(s.times) == 9
    assert s.times[0] == NS.horizon_T and s.times[-1] == 0.0
    assert np.all(np.diff(s.times) < 0) and np.all(np.diff(s.gammas) > 0)
    assert learned.discard_fraction < 0.5


def test_file_round_trip_exact(tmp_path, learned):
    path = tmp_path / "s.sched"
    save_schedule(path, learned, NS)
    loaded = load_schedule(path)
    assert np.array_equal(loaded.schedule.times, learned.schedule.times)
    assert np.array_equal(loaded.schedule.gammas, learned.schedule.gammas)
    assert loaded.noise_schedule == NS
    assert loaded.meta["threshold_r"] == learned.threshold_r


def test_loaded_schedule_costs_K_evaluations(learned):
    loaded = loads_schedule(dumps_schedule(learned, NS))
    field = FlowField(MODEL)
    rbe_sample(field, loaded.noise_schedule, loaded.schedule, np.zeros((4, 64)))
    assert field.calls == 8


def test_rerun_is_identical(learned):
    cfg = ScheduleLearnConfig(target_K=8, n_seeds=64, seed=0)
    again = learn_rbe_schedule(cfg, FlowField(MODEL), NS, learned.threshold_r)
    assert dumps_schedule(again, NS) == dumps_schedule(learned, NS)


def _doc(learned):
    return json.loads(dumps_schedule(learned, NS))


def test_rejects_non_monotone(learned):
    d = _doc(learned)
    d["times"][2], d["times"][3] = d["times"][3], d["times"][2]
    with pytest.raises(ScheduleFormatError, match="monotonicity violation"):
        loads_schedule(json.dumps(d))


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("times"),
    lambda d: d.update(format_version=99),
    lambda d: d.update(target_K=3),
    lambda d: d["times"].__setitem__(-1, 0.01),
])
def test_rejects_malformed(learned, mutate):
    d = _doc(learned)
    mutate(d)
    with pytest.raises(ScheduleFormatError):
        loads_schedule(json.dumps(d))


def test_rejects_garbage():
    with pytest.raises(ScheduleFormatError):
        loads_schedule("not json")


def test_average_schedules_anchors():
    out = average_schedules([np.array([1.0, 0.5, 0.0]), np.array([1.0, 0.3, 0.0])], 1.0)
    assert np.allclose(out, [1.0, 0.4, 0.0])


def test_unreachable_target_raises():
    cfg = ScheduleLearnConfig(target_K=500, n_seeds=4, r_lo=1e-3, r_hi=1.0, max_bisect_iters=8)
    with pytest.raises(CalibrationError) as info:
        calibrate_threshold(cfg, FlowField(GaussianModel.isotropic(4, 4.0)), NS)
    assert info.value.k_range[1] < 500


def test_low_dimension_instability_is_reported():
    cfg = ScheduleLearnConfig(target_K=10, n_seeds=32, seed=0)
    field = FlowField(GaussianModel.isotropic(1, 4.0))
    r, _ = calibrate_threshold(cfg, field, NS)
    with pytest.raises(ScheduleInstabilityError) as info:
        learn_rbe_schedule(cfg, field, NS, r)
    assert sum(info.value.length_histogram.values()) == 32


def test_compare_schedules_grid(learned):
    grid = compare_schedules(learned.schedule, NS, 11)
    assert grid.shape == (11, 4)
    assert np.allclose(grid[:, 2], NS.gamma(grid[:, 0]))
    assert np.allclose(grid[:, 3], NoiseSchedule.cosine().gamma(grid[:, 0]))
    assert np.all(np.diff(grid[:, 1]) < 0)


def test_uniform_schedule_provenance():
    s = InferenceSchedule.uniform_gamma(NS, 5)
    assert s.provenance.value == "uniform_gamma"
    assert np.allclose(np.diff(s.gammas), np.diff(s.gammas)[0])
