import math

import numpy as np
import pytest

from gpsar.core import Pose3, PoseSeries, batch_log
from gpsar.estimator import (Calibration, build_graph, moving_baseline_residual, position_residual,
                             predict_intermediate, sensor_poses, solve_batch, solve_fixed_lag)
from gpsar.sar import SarConfig, antenna_series, expected_phase
from gpsar.sim import (GRAVITY, CircleMotion, GroundTruth, PointTarget, ScenarioConfig,
                       analytic_circle_truth, emit_gnss, emit_imu, emit_radar, simulate, swing_truth)
from _helpers import G_VEC, R_BM, R_BP


def test_circle_kinematics_example():
    tr = analytic_circle_truth(7.5, 1.0, 2.0, 10.0)
    # closed form: centripetal v^2/r and yaw rate v/r
    assert np.allclose(np.linalg.norm(tr.a, axis=1), 1.0 / 7.5, atol=1e-12)
    assert np.allclose(np.abs(tr.omega_B[:, 2]), 1.0 / 7.5, atol=1e-12)
    assert round(1.0 / 7.5, 4) == 0.1333
    assert np.allclose(np.linalg.norm(tr.v, axis=1), 1.0, atol=1e-12)
    # acceleration points at the center
    radial = -tr.p[:, :2] / np.linalg.norm(tr.p[:, :2], axis=1, keepdims=True)
    assert np.allclose(np.sum(tr.a[:, :2] * radial, axis=1), 1.0 / 7.5, atol=1e-12)


def test_circle_period_and_kinematic_consistency():
    period = 2 * math.pi * 7.5
    ends = CircleMotion(7.5, 1.0, 2.0).evaluate(np.array([0.0, period]))
    assert np.allclose(ends.p[0], ends.p[1], atol=1e-12)
    assert np.allclose(ends.R[0], ends.R[1], atol=1e-12)
    tr = analytic_circle_truth(7.5, 1.0, 2.0, period, rate=100.0)
    # central differences of the position match the velocity to O(h^2)
    h = tr.t[1] - tr.t[0]
    dv = (tr.p[2:] - tr.p[:-2]) / (2 * h)
    assert np.max(np.abs(dv - tr.v[1:-1])) < (1.0 / 7.5) ** 2 * h**2
    # rotation finite differences match the body rate
    w = batch_log(np.swapaxes(tr.R[:-2], 1, 2) @ tr.R[2:]) / (2 * h)
    assert np.max(np.abs(w - tr.omega_B[1:-1])) < 1e-6


def test_circle_rejects_bad_geometry():
    with pytest.raises(ValueError):
        CircleMotion(0.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        CircleMotion(5.0, -1.0, 2.0)


def test_swing_generator_contract():
    a = swing_truth(90.0, seed=4)
    b = swing_truth(90.0, seed=4)
    for k in ("t", "p", "v", "a", "R", "omega_B"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert not np.array_equal(swing_truth(90.0, seed=5).p, a.p)
    tilt = np.degrees(np.arccos(np.clip(a.R[:, 2, 2], -1, 1)))
    assert tilt.max() >= 20.0
    assert np.linalg.norm(a.a, axis=1).max() >= 2.0
    # long-run mean sits under the pivot at rope length
    pivot_below = np.array([0.0, 0.0, 3.0 - 2.0])
    assert np.linalg.norm(a.p.mean(axis=0) - pivot_below) < 0.1
    with pytest.raises(ValueError):
        swing_truth(0.0)


def test_stationary_imu_reads_gravity():
    t = np.arange(101) * 1e-3
    n = len(t)
    tr = GroundTruth(t, np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3)), np.tile(np.eye(3), (n, 1, 1)),
                     np.zeros((n, 3)))
    imu = emit_imu(tr)
    assert np.array_equal(imu.acc, np.tile([0.0, 0.0, GRAVITY], (n, 1)))
    assert not np.any(imu.gyr)


def test_imu_noise_scales_with_rate():
    tr = analytic_circle_truth(7.5, 1.0, 2.0, 60.0)
    clean = emit_imu(tr)
    noisy = emit_imu(tr, sigma_a=2e-3, sigma_g=2e-4, seed=1)
    dt = 1e-3
    sa = np.std(noisy.acc - clean.acc, axis=0)
    sg = np.std(noisy.gyr - clean.gyr, axis=0)
    assert np.allclose(sa, 2e-3 / math.sqrt(dt), rtol=0.05)
    assert np.allclose(sg, 2e-4 / math.sqrt(dt), rtol=0.05)


def test_imu_biases_are_additive():
    tr = analytic_circle_truth(5.0, 1.0, 2.0, 1.0)
    b_a, b_g = np.array([0.01, -0.02, 0.03]), np.array([1e-3, 0.0, -2e-3])
    d = emit_imu(tr, b_a, b_g)
    c = emit_imu(tr)
    assert np.allclose(d.acc - c.acc, b_a, atol=1e-14)
    assert np.allclose(d.gyr - c.gyr, b_g, atol=1e-14)


def test_gnss_identity_pose_and_rigid_baseline():
    t = np.arange(1001) * 1e-3
    n = len(t)
    tr = GroundTruth(t, np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3)), np.tile(np.eye(3), (n, 1, 1)),
                     np.zeros((n, 3)))
    pos, mb = emit_gnss(tr, R_BP, R_BM, zero_noise=True, latency=0.2)
    assert np.array_equal(pos.r_IP, np.tile(R_BP, (len(pos.t), 1)))
    assert len(pos.t) == 11 and len(mb.t) == 6
    assert np.all(pos.latency == 0.2)
    circ = analytic_circle_truth(5.0, 1.0, 2.0, 20.0, wobble_amp=0.2, ramp=1.0)
    _, mb = emit_gnss(circ, R_BP, R_BM, zero_noise=True)
    assert np.allclose(np.linalg.norm(mb.r_PM, axis=1), np.linalg.norm(R_BM - R_BP), atol=1e-14)


def test_zero_noise_residuals_vanish_at_truth():
    from gpsar.estimator import NavState
    from gpsar.core import Rot3
    tr = analytic_circle_truth(5.0, 1.0, 2.0, 10.0, wobble_amp=0.2, ramp=1.0)
    pos, mb = emit_gnss(tr, R_BP, R_BM, zero_noise=True)
    cal = Calibration(r_BP=R_BP, r_BM=R_BM)
    worst = 0.0
    for k, tk in enumerate(pos.t):
        i = int(np.searchsorted(tr.t, tk - 1e-9))
        x = NavState(tk, tr.p[i], tr.v[i], Rot3.from_matrix(tr.R[i]))
        r, _ = position_residual(x, cal, pos.r_IP[k], pos.cov[k])
        worst = max(worst, np.max(np.abs(r)))
    for k, tk in enumerate(mb.t):
        i = int(np.searchsorted(tr.t, tk - 1e-9))
        x = NavState(tk, tr.p[i], tr.v[i], Rot3.from_matrix(tr.R[i]))
        r, _ = moving_baseline_residual(x, cal, mb.r_PM[k], mb.cov[k])
        worst = max(worst, np.max(np.abs(r)))
    assert worst < 1e-9


@pytest.fixture(scope="module")
def monostatic():
    # antenna hovering so that the range to the origin target is sqrt(29) m ~ 5.385 m
    t = np.arange(11) * 1e-3
    n = len(t)
    ant = PoseSeries(t, np.tile([0.0, -5.0, 2.0], (n, 1)), np.tile([1.0, 0, 0, 0], (n, 1)))
    return ant


def test_radar_single_target_peak_and_phase(monostatic):
    cfg = SarConfig()
    pulses = emit_radar(monostatic, monostatic, [PointTarget((0.0, 0.0, 0.0))], cfg, rate=1000.0,
                        bin_spacing=0.005)
    R = math.sqrt(29.0)
    assert round(R, 3) == 5.385
    row = np.abs(pulses.data[0])
    r_peak = pulses.ranges[int(np.argmax(row))]
    assert abs(r_peak - R) <= pulses.bin_spacing / 2
    # phase of the response at its exact center, generated in double precision
    ref, _ = expected_phase(Pose3(translation=np.array([0.0, -5.0, 2.0])),
                            Pose3(translation=np.array([0.0, -5.0, 2.0])), [0.0, 0.0, 0.0], cfg)
    exact = emit_radar(monostatic, monostatic, [PointTarget((0.0, 0.0, 0.0))], cfg, rate=1000.0,
                       start_range=R, bin_spacing=0.005, num_bins=1, dtype=np.complex128)
    assert abs(exact.data[0, 0]) == pytest.approx(1.0, abs=1e-12)
    assert abs(math.remainder(float(np.angle(exact.data[0, 0])) - ref, 2 * math.pi)) < 1e-9
    # independent closed form: two-way path 2 sqrt(29) at the center frequency
    closed = 2.0 * math.pi * cfg.f_c * 2.0 * R / cfg.c
    assert abs(math.remainder(float(np.angle(exact.data[0, 0])) - closed, 2 * math.pi)) < 1e-9


def test_radar_zero_targets_and_two_targets(monostatic):
    empty = emit_radar(monostatic, monostatic, [], SarConfig(), rate=1000.0, start_range=4.0, num_bins=64)
    assert empty.data.shape == (11, 64) and not np.any(empty.data)
    two = emit_radar(monostatic, monostatic, [PointTarget((0.0, 0.0, 0.0)), PointTarget((0.0, 3.0, 0.0))],
                     SarConfig(), rate=1000.0)
    row = np.abs(two.data[0])
    peaks = [i for i in range(1, len(row) - 1) if row[i] > row[i - 1] and row[i] >= row[i + 1] and row[i] > 0.5]
    ranges = sorted(two.ranges[peaks])
    assert len(ranges) == 2
    assert abs(ranges[0] - math.sqrt(29)) < 0.01 and abs(ranges[1] - math.sqrt(64 + 4)) < 0.01


def test_radar_noise_is_seeded(monostatic):
    cfg = SarConfig()
    a = emit_radar(monostatic, monostatic, [], cfg, rate=1000.0, start_range=4.0, num_bins=64, noise_std=0.1,
                   seed=2)
    b = emit_radar(monostatic, monostatic, [], cfg, rate=1000.0, start_range=4.0, num_bins=64, noise_std=0.1,
                   seed=2)
    assert np.array_equal(a.data, b.data) and np.any(a.data)


def test_scenario_determinism_and_serialization(tmp_path):
    from gpsar.estimator.io import write_imu
    cfg = ScenarioConfig(duration=3.0, seed=11, targets=[{"position": [0, 0, 0]}])
    s1, s2 = simulate(cfg), simulate(ScenarioConfig.from_dict(cfg.to_dict()))
    write_imu(tmp_path / "a.csv", s1.imu)
    write_imu(tmp_path / "b.csv", s2.imu)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(s1.radar.data, s2.radar.data)
    with pytest.raises(ValueError):
        ScenarioConfig(imu_rate=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ScenarioConfig(source="helix")


def test_zero_noise_end_to_end_antenna_poses():
    cfg = ScenarioConfig(duration=20.0, zero_noise=True,
                         circle={"radius": 7.5, "speed": 1.0, "altitude": 2.0, "standstill": 2.0, "ramp": 3.0})
    sc = simulate(cfg)
    g = build_graph(sc.imu, sc.positions, sc.baselines, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    on = solve_fixed_lag(g, 3.0)
    est = solve_batch(g, on.estimate).estimate
    body = predict_intermediate(est, sc.imu, G_VEC)
    sar = cfg.sar_config()
    got = sensor_poses(body, [sar.T_BS_tx, sar.T_BS_rx])
    want = antenna_series(sc.truth.poses(), sar)
    for g_s, w_s in zip(got, want):
        w_i = w_s.interpolate(g_s.t)
        assert np.max(np.linalg.norm(g_s.position - w_i.position, axis=1)) < 1e-4
        dR = batch_log(np.swapaxes(w_i.rotations, 1, 2) @ g_s.rotations)
        assert np.max(np.linalg.norm(dR, axis=1)) < 1e-5
