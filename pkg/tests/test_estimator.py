import math

import numpy as np
import pytest
from _helpers import (G_VEC, R_BM, R_BP, epoch_errors, imu_jacobian_errors, plus,
                      position_jacobian_errors, baseline_jacobian_errors, truth_estimate)

from gpsar.core import Pose3, PoseSeries, Rot3, batch_log, matrices_to_quats
from gpsar.estimator import (Calibration, DegenerateTriadError, EstimatorError, GapError,
                             GnssPositions, ImuMeasurements, MotionDetectedError, MovingBaselines,
                             NavState, NoiseConfig, build_graph, dji_rtk_compose, graph_cost,
                             gyro_bias_init, imu_residual, initial_position, moving_baseline_residual,
                             position_residual, predict_intermediate, preintegrate, sensor_poses,
                             solve_batch, solve_fixed_lag, triad_init)
from gpsar.estimator.io import (FormatError, read_baselines, read_calibration, read_imu,
                                read_poses, read_positions, write_baselines, write_calibration,
                                write_imu, write_poses, write_positions)
from gpsar.estimator.preint import propagate
from gpsar.sim import (CircleMotion, emit_attitude, emit_gnss, emit_imu, _times)


# ---------------------------------------------------------------- init

def test_triad_examples():
    R = triad_init([0, 0, 9.81], [1, 0, 0], [1, 0, 0])
    assert np.allclose(R.matrix, np.eye(3), atol=1e-12)
    R = triad_init([0, 0, 9.81], [0, 1, 0], [1, 0, 0])
    assert np.allclose(R.rotate([1, 0, 0]), [0, 1, 0], atol=1e-12)
    assert np.allclose(R.rotate([0, 1, 0]), [-1, 0, 0], atol=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(50):
        acc = rng.normal(size=3) + [0, 0, 9.81]
        # keep the baselines well away from the vertical, as antennas mounted on a frame are
        bI, bB = rng.normal(size=(2, 3)) * [1, 1, 0.3]
        R = triad_init(acc, bI, bB)
        assert np.allclose(R.rotate(-acc / np.linalg.norm(acc)), [0, 0, -1], atol=1e-9)


def test_triad_degenerate():
    with pytest.raises(DegenerateTriadError):
        triad_init([0, 0, 9.81], [0, 0, 1], [1, 0, 0])
    with pytest.raises(DegenerateTriadError):
        triad_init([0, 0, 0], [1, 0, 0], [1, 0, 0])


def test_initial_position_examples():
    I = Rot3.identity()
    assert np.allclose(initial_position([1, 2, 3], I, [0, 0, 0.1]), [1, 2, 2.9])
    assert np.array_equal(initial_position([1, 2, 3], I, [0, 0, 0]), [1, 2, 3])
    assert np.allclose(initial_position([0, 0, 0], Rot3.rz(math.pi), [0.1, 0, 0]), [0.1, 0, 0], atol=1e-15)


def _static_imu(gyr, n=300, rate=1000.0):
    t = np.arange(n) / rate
    return ImuMeasurements(t, np.tile([0, 0, 9.8066], (n, 1)), gyr)


def test_gyro_bias_examples():
    assert np.array_equal(gyro_bias_init(_static_imu(np.zeros((300, 3))), 200), np.zeros(3))
    b = gyro_bias_init(_static_imu(np.tile([0.01, 0, 0], (300, 1))), 200)
    assert np.allclose(b, [0.01, 0, 0], atol=1e-15)
    rng = np.random.default_rng(1)
    sigma = 0.003
    for _ in range(20):
        b = gyro_bias_init(_static_imu(rng.normal(0, sigma, (300, 3))), 200)
        assert np.linalg.norm(b) < 3 * sigma * math.sqrt(3) / math.sqrt(200)
    with pytest.raises(ValueError):
        gyro_bias_init(_static_imu(np.zeros((50, 3)), n=50), 200)


def test_gyro_bias_detects_motion():
    rng = np.random.default_rng(2)
    gyr = rng.normal(0, 0.5, (300, 3))
    with pytest.raises(MotionDetectedError):
        gyro_bias_init(_static_imu(gyr), 200, sigma_g=2e-4)


# ---------------------------------------------------------------- preintegration

def test_preintegration_constant_acceleration():
    n = 101
    imu = ImuMeasurements(np.linspace(0, 0.1, n), np.tile([1.0, 0, 0], (n, 1)), np.zeros((n, 3)))
    pim = preintegrate(imu)
    assert np.allclose(pim.dv, [0.1, 0, 0], atol=1e-9)
    assert np.allclose(pim.dp, [0.005, 0, 0], atol=1e-9)


def test_preintegration_constant_rate():
    n = 1001
    imu = ImuMeasurements(np.linspace(0, 1, n), np.zeros((n, 3)), np.tile([0, 0, math.pi / 2], (n, 1)))
    pim = preintegrate(imu)
    assert np.allclose(pim.dR, Rot3.rz(math.pi / 2).matrix, atol=1e-6)


def test_chained_preintegration_reproduces_circle():
    truth = CircleMotion(7.5, 1.0, 2.0, standstill=2, ramp=3).evaluate(_times(60, 1000))
    imu = emit_imu(truth)
    epochs = np.arange(0, len(truth), 100)
    R, p, v = truth.R[0], truth.p[0], truth.v[0]
    worst = 0.0
    for a, b in zip(epochs[:-1], epochs[1:]):
        pim = preintegrate(imu, t0=truth.t[a], t1=truth.t[b])
        R, p, v = propagate(R, p, v, pim, np.zeros(6), G_VEC)
        worst = max(worst, np.linalg.norm(p - truth.p[b]))
    assert worst < 1e-5


def test_imu_residual_vanishes_on_integrated_states():
    rng = np.random.default_rng(3)
    n = 201
    imu = ImuMeasurements(np.arange(n) * 1e-3, [0, 0, 9.8] + rng.normal(0, 1, (n, 3)), rng.normal(0, 0.5, (n, 3)))
    bias = np.array([0.01, -0.02, 0.03, 1e-3, 0.0, -2e-3])
    pim = preintegrate(imu, bias[:3], bias[3:])
    xi = NavState(0.0, [1, 2, 3], [0.5, 0, 0], Rot3.exp([0.1, 0.2, 0.3]))
    Rj, pj, vj = propagate(xi.R_IB.matrix, xi.r_IB, xi.v_B, pim, bias, G_VEC)
    xj = NavState(pim.dt, pj, vj, Rot3.from_matrix(Rj))
    res, _ = imu_residual(xi, xj, Calibration(bias[:3], bias[3:]), pim, G_VEC)
    assert np.linalg.norm(res) < 1e-8
    with pytest.raises(EstimatorError):
        imu_residual(xi, NavState(0.5, pj, vj, Rot3.from_matrix(Rj)), Calibration(), pim, G_VEC)


def test_reintegration_threshold():
    rng = np.random.default_rng(4)
    n = 101
    imu = ImuMeasurements(np.arange(n) * 1e-3, rng.normal(0, 1, (n, 3)), rng.normal(0, 1, (n, 3)))
    pim = preintegrate(imu)
    assert not pim.needs_reintegration(np.full(6, 9e-4))
    assert pim.needs_reintegration(np.array([0, 0, 0, 0, 0, 1.1e-3]))
    re = pim.reintegrate(np.full(6, 0.01))
    assert np.array_equal(re.bias_lin, np.full(6, 0.01))


# ---------------------------------------------------------------- factors

def test_position_factor_examples():
    x = NavState(0.0, [1, 2, 3], [0, 0, 0], Rot3.identity())
    c = Calibration(r_BP=[0, 0, 0.1])
    res, _ = position_residual(x, c, [1, 2, 3.1])
    assert np.allclose(res, 0, atol=1e-15)
    _, J = position_residual(NavState(0.0, [1, 2, 3], [0, 0, 0], Rot3.exp([0.3, 0.1, 0])), Calibration(), [0, 0, 0])
    assert np.array_equal(J["R"], np.zeros((3, 3)))


def test_baseline_factor_example():
    x = NavState(0.0, [0, 0, 0], [0, 0, 0], Rot3.identity())
    c = Calibration(r_BP=[0.1, 0, 0], r_BM=[0.6, 0, 0])
    res, _ = moving_baseline_residual(x, c, [0.5, 0, 0])
    assert np.allclose(res, 0, atol=1e-15)


def test_factor_jacobians_small_sample():
    rng = np.random.default_rng(11)
    for _ in range(50):
        assert max(position_jacobian_errors(rng)) < 1e-6
        assert max(baseline_jacobian_errors(rng)) < 1e-6
        assert max(imu_jacobian_errors(rng)) < 1e-5


# ---------------------------------------------------------------- graph and solvers

def _streams(duration=20.0, zero_noise=True, seed=0, wobble=0.0, b_a=(0, 0, 0), b_g=(0, 0, 0)):
    truth = CircleMotion(5.0, 1.0, 2.0, standstill=2.0, ramp=3.0, wobble_amp=wobble).evaluate(
        _times(duration, 1000))
    sa, sg = (0.0, 0.0) if zero_noise else (2e-3, 2e-4)
    imu = emit_imu(truth, b_a, b_g, sa, sg, seed=seed)
    pos, mb = emit_gnss(truth, R_BP, R_BM, seed=seed, zero_noise=zero_noise)
    return truth, imu, pos, mb


def test_graph_counts():
    truth, imu, pos, mb = _streams(duration=9.999)
    g = build_graph(imu, pos, mb, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    assert (g.num_nodes, g.num_position_factors, g.num_baseline_factors, g.num_imu_factors) == (100, 100, 50, 99)
    g1 = build_graph(imu, pos, None, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    assert g1.num_baseline_factors == 0 and g1.num_nodes == 100
    g2 = build_graph(imu, pos, mb, calibration=Calibration(r_BP=R_BP, r_BM=R_BM), use_baseline=False)
    assert g2.num_baseline_factors == 0


def test_graph_rejects_imu_gap():
    truth, imu, pos, mb = _streams(duration=5.0)
    keep = (imu.t < 2.0) | (imu.t > 2.1)
    with pytest.raises(GapError):
        build_graph(imu.__class__(imu.t[keep], imu.acc[keep], imu.gyr[keep]), pos, mb)


def test_heading_offset_yaws_prior():
    truth, imu, pos, mb = _streams(duration=5.0)
    cal = Calibration(r_BP=R_BP, r_BM=R_BM)
    g0 = build_graph(imu, pos, mb, calibration=cal)
    g5 = build_graph(imu, pos, mb, calibration=cal, heading_offset=math.radians(5))
    d = (g0.prior.x0.R_IB.inverse() @ g5.prior.x0.R_IB).matrix
    rel = g5.prior.x0.R_IB.matrix @ g0.prior.x0.R_IB.matrix.T
    assert math.degrees(math.atan2(rel[1, 0], rel[0, 0])) == pytest.approx(5.0, abs=1e-9)
    assert np.linalg.norm(batch_log(d[None])[0]) == pytest.approx(math.radians(5), abs=1e-9)


def test_zero_noise_online_and_batch_from_truth():
    truth, imu, pos, mb = _streams(duration=20.0)
    g = build_graph(imu, pos, mb, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    on = solve_fixed_lag(g, 3.0)
    dp, dR = epoch_errors(on.estimate, truth)
    assert dp[-1] < 1e-4 and dR[-1] < 1e-5
    init = truth_estimate(g, truth)
    assert graph_cost(g, init) < 1e-12
    b = solve_batch(g, init)
    assert b.report.iterations[0] <= 2 and b.report.cost < 1e-12


def test_infinite_window_equals_batch():
    truth, imu, pos, mb = _streams(duration=12.0, zero_noise=False, seed=3)
    # tight bias priors keep both solvers below the re-integration threshold, so the
    # preintegrated summaries (and hence the cost functions) stay identical
    noise = NoiseConfig(prior_ba=3e-4, prior_bg=1e-4)
    g = build_graph(imu, pos, mb, noise, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    on = solve_fixed_lag(g, math.inf)
    b = solve_batch(g, on.estimate)
    assert on.report.reintegrations == 0 and b.report.reintegrations == 0
    assert np.max(np.abs(on.estimate.p[-1] - b.estimate.p[-1])) < 1e-9
    assert np.max(np.abs(batch_log((on.estimate.R[-1].T @ b.estimate.R[-1])[None]))) < 1e-9
    assert b.report.cost <= on.report.cost


def test_fixed_lag_is_causal():
    truth, imu, pos, mb = _streams(duration=12.0, zero_noise=False, seed=5)
    cal = Calibration(r_BP=R_BP, r_BM=R_BM)
    full = solve_fixed_lag(build_graph(imu, pos, mb, calibration=cal), 3.0).estimate
    t_k = 8.0
    cut = lambda s: s.t <= t_k + 1e-9
    imu_k = ImuMeasurements(imu.t[cut(imu)], imu.acc[cut(imu)], imu.gyr[cut(imu)])
    pos_k = GnssPositions(pos.t[cut(pos)], pos.r_IP[cut(pos)], pos.cov[cut(pos)])
    mb_k = MovingBaselines(mb.t[cut(mb)], mb.r_PM[cut(mb)], mb.cov[cut(mb)])
    part = solve_fixed_lag(build_graph(imu_k, pos_k, mb_k, calibration=cal), 3.0).estimate
    k = len(part) - 1
    assert full.t[k] == part.t[k] == pytest.approx(t_k)
    assert np.array_equal(full.p[k], part.p[k]) and np.array_equal(full.R[k], part.R[k])
    assert np.array_equal(full.v[k], part.v[k]) and np.array_equal(full.bias[k], part.bias[k])


def test_window_validation():
    truth, imu, pos, mb = _streams(duration=3.0)
    g = build_graph(imu, pos, mb, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    with pytest.raises(EstimatorError):
        solve_fixed_lag(g, 0.5)


def test_baseline_stream_needs_cad_levers():
    truth, imu, pos, mb = _streams(duration=3.0)
    with pytest.raises(EstimatorError, match="CAD"):
        build_graph(imu, pos, mb)
    assert build_graph(imu, pos, None).num_baseline_factors == 0


def test_lever_observability_stationary_vs_dynamic():
    cal = Calibration(r_BP=R_BP + 0.03, r_BM=R_BM)
    prior = NoiseConfig().prior_lever
    # stationary: the lever arm and the position are not separable
    t = _times(30.0, 1000)
    still = CircleMotion(5.0, 1.0, 2.0, standstill=1e6).evaluate(t)
    imu = emit_imu(still, sigma_a=2e-3, sigma_g=2e-4)
    pos, mb = emit_gnss(still, R_BP, R_BM)
    b = solve_batch(build_graph(imu, pos, mb, calibration=cal, use_baseline=False))
    assert np.all(b.marginal_std["r_BP"] > 0.9 * prior)
    # with the baseline the difference r_BM - r_BP is pinned, so two equal priors split to sigma/sqrt(2)
    b = solve_batch(build_graph(imu, pos, mb, calibration=cal))
    assert np.allclose(b.marginal_std["r_BP"], prior / math.sqrt(2), rtol=0.02)
    # dynamic flight with attitude excitation
    truth = CircleMotion(3.0, 1.0, 2.5, standstill=5.0, ramp=3.0, wobble_amp=0.3,
                         wobble_freq=(0.6, 0.9)).evaluate(_times(30.0, 1000))
    imu = emit_imu(truth, sigma_a=2e-3, sigma_g=2e-4)
    pos, mb = emit_gnss(truth, R_BP, R_BM)
    g = build_graph(imu, pos, mb, calibration=cal)
    b = solve_batch(g, solve_fixed_lag(g).estimate)
    assert np.all(b.marginal_std["r_BP"] < prior / 10)


# ---------------------------------------------------------------- poses

def test_predict_intermediate_zero_noise():
    truth, imu, pos, mb = _streams(duration=10.0)
    g = build_graph(imu, pos, mb, calibration=Calibration(r_BP=R_BP, r_BM=R_BM))
    series = predict_intermediate(truth_estimate(g, truth), imu, g.noise.g_vec)
    idx = np.searchsorted(truth.t, series.t - 1e-9)
    assert np.max(np.linalg.norm(series.position - truth.p[idx], axis=1)) < 1e-4
    assert len(series) == len(imu) - int(round(imu.t[0] * 1000))


def test_sensor_poses_examples():
    rng = np.random.default_rng(6)
    R = np.stack([Rot3.exp(w).matrix for w in rng.normal(size=(10, 3))])
    series = PoseSeries(np.arange(10.0), rng.normal(size=(10, 3)), matrices_to_quats(R))
    same, = sensor_poses(series, Pose3())
    assert np.array_equal(same.position, series.position)
    level = PoseSeries(np.arange(3.0), np.zeros((3, 3)), np.tile([1.0, 0, 0, 0], (3, 1)))
    shifted, = sensor_poses(level, Pose3(translation=[0.2, 0, -0.3]))
    assert np.allclose(shifted.position, [[0.2, 0, -0.3]] * 3)
    T = Pose3(Rot3.exp([0.1, -0.2, 0.3]), [0.1, 0.2, 0.3])
    back, = sensor_poses(sensor_poses(series, T)[0], T.inverse())
    assert np.max(np.abs(back.position - series.position)) < 1e-12
    assert np.max(np.abs(back.quat - series.quat)) < 1e-12


def test_dji_chain():
    radius = 7.5
    truth = CircleMotion(radius, 1.0, 2.0).evaluate(_times(20, 1000))
    pos, _ = emit_gnss(truth, np.zeros(3), np.array([0.5, 0, 0]), zero_noise=True)
    att = emit_attitude(truth, 50.0)
    meas, = dji_rtk_compose(pos, att, Pose3(), Pose3(), pos.t)
    assert np.array_equal(meas.position, pos.r_IP)
    pos, _ = emit_gnss(truth, R_BP, R_BM, zero_noise=True)
    T_BS = Pose3(translation=[0.1, 0.05, -0.1])
    tq = np.linspace(0.5, 19.5, 500)
    dji, = dji_rtk_compose(pos, att, Pose3(translation=-R_BP), T_BS, tq)
    ref, = sensor_poses(truth.poses().interpolate(tq), T_BS)
    err = np.max(np.linalg.norm(dji.position - ref.position, axis=1))
    # linear interpolation of 10 Hz fixes on an arc: sagitta v^2 dt^2 / (8 r) of the antenna track
    r_ant = float(np.mean(np.linalg.norm(pos.r_IP[:, :2], axis=1)))
    assert err <= (0.1 * r_ant / radius) ** 2 / (8 * r_ant) * 1.001
    assert err < 2e-4


# ---------------------------------------------------------------- io

def test_stream_roundtrip(tmp_path):
    truth, imu, pos, mb = _streams(duration=2.0, zero_noise=False)
    write_imu(tmp_path / "imu.csv", imu)
    write_positions(tmp_path / "pos.csv", pos)
    write_baselines(tmp_path / "mb.csv", mb)
    i2, p2, m2 = read_imu(tmp_path / "imu.csv"), read_positions(tmp_path / "pos.csv"), read_baselines(tmp_path / "mb.csv")
    assert np.array_equal(i2.acc, imu.acc) and np.array_equal(i2.t, imu.t)
    assert np.array_equal(p2.r_IP, pos.r_IP) and np.array_equal(p2.cov, pos.cov)
    assert np.array_equal(m2.r_PM, mb.r_PM)
    series = truth.poses()
    write_poses(tmp_path / "poses.csv", series)
    assert np.array_equal(read_poses(tmp_path / "poses.csv").quat, series.quat)
    cal = Calibration(r_BP=R_BP, r_BM=R_BM)
    write_calibration(tmp_path / "cal.json", cal, {"r_BP": np.ones(3)})
    c2, std = read_calibration(tmp_path / "cal.json")
    assert np.array_equal(c2.r_BP, R_BP) and np.array_equal(std["r_BP"], np.ones(3))


def test_malformed_streams(tmp_path):
    (tmp_path / "a.csv").write_text("t,ax\n1,2\n")
    with pytest.raises(FormatError, match=":1:"):
        read_imu(tmp_path / "a.csv")
    (tmp_path / "b.csv").write_text("t,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n0.1,1,2,x,4,5,6\n")
    with pytest.raises(FormatError, match=":3:"):
        read_imu(tmp_path / "b.csv")
    with pytest.raises(FormatError):
        read_imu(tmp_path / "missing.csv")
