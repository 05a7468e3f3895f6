"""Startup initialization: TRIAD attitude, antenna-corrected position and gyro bias."""
from __future__ import annotations

import math

import numpy as np

from ..core import Rot3
from .types import DegenerateTriadError, ImuMeasurements, MotionDetectedError

MIN_TRIAD_ANGLE = math.radians(5.0)


def _triad_frame(g: np.ndarray, b: np.ndarray) -> np.ndarray:
    g_hat = g / np.linalg.norm(g)
    c = np.cross(g, b)
    c_hat = c / np.linalg.norm(c)
    return np.column_stack([g_hat, c_hat, np.cross(g_hat, c_hat)])


def triad_init(acc0, baseline_I, baseline_B) -> Rot3:
    """R_IB from the gravity pair ([0, 0, -1], -acc0) and the GNSS baseline pair."""
    acc0, bI, bB = (np.asarray(v, dtype=float) for v in (acc0, baseline_I, baseline_B))
    if min(np.linalg.norm(acc0), np.linalg.norm(bI), np.linalg.norm(bB)) == 0:
        raise DegenerateTriadError("TRIAD vectors must be non-zero")
    gI, gB = np.array([0.0, 0.0, -1.0]), -acc0
    for g, b in ((gI, bI), (gB, bB)):
        s = np.linalg.norm(np.cross(g, b)) / (np.linalg.norm(g) * np.linalg.norm(b))
        if math.asin(min(s, 1.0)) < MIN_TRIAD_ANGLE:
            raise DegenerateTriadError("gravity and baseline are nearly parallel")
    return Rot3.from_matrix(_triad_frame(gI, bI) @ _triad_frame(gB, bB).T)


def initial_position(r_IP, R0: Rot3, r_BP0) -> np.ndarray:
    return np.asarray(r_IP, dtype=float) - R0.rotate(r_BP0)


def gyro_bias_init(imu: ImuMeasurements, count: int = 200, sigma_g: float | None = None,
                   ) -> np.ndarray:
    """Mean of the first ``count`` gyro samples taken at standstill.

    With ``sigma_g`` (a rate density) a per-axis sample std above five times
    the discrete noise level is treated as motion.
    """
    if count < 100 or len(imu) < count:
        raise ValueError("bias averaging needs at least 100 samples")
    w = imu.gyr[:count]
    if sigma_g is not None and len(imu) > 1:
        dt = float(np.median(np.diff(imu.t[:count])))
        if np.any(w.std(axis=0) > 5.0 * sigma_g / math.sqrt(dt)):
            raise MotionDetectedError("gyro samples vary too much for a standstill")
    return w.mean(axis=0)
