import math

import numpy as np
import pytest

from gpsar.control import (AltimeterParams, AltitudeFilterState, AltitudeScenario, CommandLimits,
                           Gains, VehicleState, alt_predict, alt_update, limit_command,
                           run_altitude_scenario, simulate_tracking, track, vehicle_step,
                           write_control_log)
from gpsar.trajectory import FlatState, plan_mission

Z = np.zeros(3)
NO_LIMIT = CommandLimits(1e9, 1e9, 1e9)


def _flat(p=Z, v=Z, a=Z, yaw=0.0, yaw_rate=0.0):
    return FlatState(np.asarray(p, float), np.asarray(v, float), np.asarray(a, float), Z, yaw, yaw_rate)


def test_proportional_only():
    g = Gains(np.eye(3), np.zeros((3, 3)), np.zeros((3, 3)), 0.0, 0.0)
    v, _ = track(_flat(p=[1, 0, 0]), VehicleState(), g, NO_LIMIT)
    assert np.array_equal(v, [1, 0, 0])


def test_horizontal_clamp_preserves_direction():
    v, r = limit_command(np.array([3.0, 4.0, 0.0]), 0.0, CommandLimits())
    assert np.allclose(v, [1.8, 2.4, 0.0]) and np.linalg.norm(v) == pytest.approx(3.0)
    v, r = limit_command(np.array([0.0, 0.0, -5.0]), 7.0, CommandLimits())
    assert v[2] == -1.0 and r == 1.0


def test_yaw_error_is_wrapped():
    g = Gains(np.zeros(3), np.zeros(3), np.zeros(3), 1.0, 0.0)
    _, r = track(_flat(yaw=2 * math.pi - 0.1), VehicleState(), g, NO_LIMIT)
    assert r == pytest.approx(-0.1)


def test_plant_rest_and_ideal_limit():
    s = vehicle_step(VehicleState(), Z, 0.0, 0.02)
    assert np.array_equal(s.position, Z) and np.array_equal(s.velocity, Z)
    s = VehicleState()
    for _ in range(10):
        s = vehicle_step(s, [1.0, -2.0, 0.5], 0.0, 0.05, tau_v=0.0)
    assert np.allclose(s.position, [0.5, -1.0, 0.25], atol=1e-12)


def test_closed_loop_circle_tracking():
    traj = plan_mission({"primitives": [{"type": "circle", "center": [0, 0], "radius": 7.5,
                                         "altitude": 2.0}]})
    run = simulate_tracking(traj)
    rms = math.sqrt(np.mean(np.sum((run["p"] - run["p_ref"]) ** 2, axis=1)))
    assert rms < 0.2


def test_predict_additivity():
    f = AltitudeFilterState(2.0, 0.01)
    same = alt_predict(f, 0.0, 1e-3)
    assert same.estimate == 2.0 and same.variance == pytest.approx(0.011)
    assert alt_predict(f, 1.0, 0.0).estimate == 3.0
    a = f
    for dz in [0.1, 0.25, -0.05, 0.2]:
        a = alt_predict(a, dz, 0.0)
    assert a.estimate == pytest.approx(2.5)


def test_tilt_projection():
    # huge prior variance: the update returns the measurement itself
    p = AltimeterParams(base_std=1e-3, range_scale=0.0, gate=1e9)
    f, ok = alt_update(AltitudeFilterState(0.0, 1e6), 5.0, math.radians(10), 0.0, p)
    assert ok and f.estimate == pytest.approx(5 * math.cos(math.radians(10)), abs=1e-9)
    assert f.estimate == pytest.approx(4.924, abs=5e-4)


def test_outlier_outside_span_rejected():
    with pytest.raises(ValueError):
        run_altitude_scenario(AltitudeScenario(duration=10.0, outlier_time=30.0))


def test_attitude_cutoff_is_noop():
    f0 = AltitudeFilterState(3.0, 0.1)
    f, ok = alt_update(f0, 3.0, math.radians(35), 0.0, AltimeterParams())
    assert not ok and f is f0


def test_mahalanobis_gate():
    p = AltimeterParams(base_std=0.2, range_scale=0.0, attitude_scale=0.0, gate=3.0)
    maha = (10 - 7) / math.sqrt(0.1 ** 2 + 0.2 ** 2)
    assert maha == pytest.approx(13.4, abs=0.05)
    f0 = AltitudeFilterState(10.0, 0.01)
    f, ok = alt_update(f0, 7.0, 0.0, 0.0, p)
    assert not ok and f == f0


def test_altitude_scenario_outlier_and_drift():
    base = run_altitude_scenario(AltitudeScenario(outlier_time=None))
    hit = run_altitude_scenario(AltitudeScenario())
    assert np.max(np.abs(hit["agl_est"] - base["agl_est"])) < 0.1
    low = base["t"] > 2 * 120.0 / 3 + 5
    err = np.abs(base["agl_est"][low] - base["agl_true"][low])
    assert np.max(err) < 0.05
    # the uncorrected drift is actually there
    assert np.mean(base["dji"][low] - base["agl_true"][low]) > 0.3


def test_control_log(tmp_path):
    traj = plan_mission({"primitives": [{"type": "stripmap", "start": [0, 0, 2], "end": [4, 0, 2]}]})
    tr = simulate_tracking(traj)
    alt = run_altitude_scenario(AltitudeScenario(duration=traj.t_end + 1, outlier_time=None))
    write_control_log(tmp_path / "log.csv", tr, alt)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].startswith("t,p_ref_x") and len(lines) == len(tr["t"]) + 1
