"""High-rate pose output and the per-sensor kinematic chains."""
from __future__ import annotations

import numpy as np

from ..core import Pose3, PoseSeries, matrices_to_quats
from .preint import integrate_path, interval_samples
from .solver import Estimate
from .types import EstimatorError, GnssPositions, ImuMeasurements


def predict_intermediate(est: Estimate, imu: ImuMeasurements, g_vec) -> PoseSeries:
    """Body poses at every IMU sample between the first and last epoch.

    Each interval is dead-reckoned forward from the earlier epoch's estimate
    with that epoch's biases, so the series resets to the estimate at every
    epoch timestamp.
    """
    g_vec = np.asarray(g_vec, float)
    if len(est) == 0:
        raise EstimatorError("empty estimate")
    ts_all, p_all, R_all = [], [], []
    for k in range(len(est) - 1):
        ts, acc, gyr = interval_samples(imu, est.t[k], est.t[k + 1])
        dR, dv, dp = integrate_path(ts, acc, gyr, est.bias[k])
        dt = (ts - ts[0])[:, None]
        Rk, vk = est.R[k], est.v[k]
        p = est.p[k] + vk * dt + 0.5 * g_vec * dt**2 + dp @ Rk.T
        # the last sample belongs to the next interval, where it is reset to the estimate
        ts_all.append(ts[:-1])
        p_all.append(p[:-1])
        R_all.append((Rk @ dR)[:-1])
    ts_all.append(est.t[-1:])
    p_all.append(est.p[-1:])
    R_all.append(est.R[-1:])
    return PoseSeries.from_matrices(np.concatenate(ts_all), np.concatenate(p_all), np.concatenate(R_all))


def sensor_poses(series: PoseSeries, extrinsics) -> list[PoseSeries]:
    """T_IS = T_IB T_BS for every extrinsic in ``extrinsics``."""
    if isinstance(extrinsics, Pose3):
        extrinsics = [extrinsics]
    return [series.compose_right(T) for T in extrinsics]


def dji_rtk_compose(positions: GnssPositions, attitude: PoseSeries, T_DB: Pose3, extrinsics,
                    tq) -> list[PoseSeries]:
    """Autopilot chain T_IS = T_ID T_DB T_BS without any estimation.

    The translation of T_ID is the linearly interpolated RTK antenna position
    and its rotation the spherically interpolated autopilot attitude.
    """
    tq = np.asarray(tq, float)
    pos = PoseSeries(positions.t, positions.r_IP, np.tile([1.0, 0.0, 0.0, 0.0], (len(positions.t), 1)))
    try:
        p = pos.interpolate(tq).position
        q = attitude.interpolate(tq).quat
    except ValueError as exc:
        raise EstimatorError(str(exc)) from exc
    T_ID = PoseSeries(tq, p, q)
    if isinstance(extrinsics, Pose3):
        extrinsics = [extrinsics]
    return [T_ID.compose_right(T_DB @ T) for T in extrinsics]


def estimate_poses(est: Estimate) -> PoseSeries:
    """Epoch-rate body poses of an estimate."""
    return PoseSeries(est.t, est.p, matrices_to_quats(est.R))
