"""Factor graph assembly from raw sensor streams."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..core import Rot3
from .factors import sqrt_info_from_cov
from .init import gyro_bias_init, initial_position, triad_init
from .preint import PreintegratedImu, _preintegrate_arrays, interval_samples
from .types import (Calibration, EstimatorError, GapError, GnssPositions, ImuMeasurements,
                    MovingBaselines, NavState, NoiseConfig)

NODE_MERGE_TOL = 1e-6
STATE_DIM = 9
BIAS_DIM = 6
NODE_DIM = STATE_DIM + BIAS_DIM
LEVER_DIM = 6


@dataclass
class Prior:
    """Gaussian prior f0 on the first state, first bias and the shared lever arms."""

    x0: NavState
    bias0: np.ndarray
    lever0: np.ndarray
    sigma_x: np.ndarray      # (r, v, phi) per axis
    sigma_bias: np.ndarray
    sigma_lever: np.ndarray


@dataclass
class FactorGraph:
    """Time-indexed state/bias nodes plus one shared lever-arm variable.

    IMU factors bridge consecutive nodes and carry the bias random walk;
    position and baseline factors are unary on their node.
    """

    times: np.ndarray
    pims: list[PreintegratedImu]
    pos_idx: np.ndarray
    pos_z: np.ndarray
    pos_L: np.ndarray
    mb_idx: np.ndarray
    mb_z: np.ndarray
    mb_L: np.ndarray
    prior: Prior
    noise: NoiseConfig
    imu: ImuMeasurements
    cad_baseline: np.ndarray
    diagnostics: list[str] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.times)

    @property
    def num_imu_factors(self) -> int:
        return len(self.pims)

    @property
    def num_position_factors(self) -> int:
        return len(self.pos_idx)

    @property
    def num_baseline_factors(self) -> int:
        return len(self.mb_idx)

    def rw_sqrt_info(self) -> np.ndarray:
        """Per-interval diagonal whitening of the bias random walk, (N-1, 6)."""
        dt = np.diff(self.times)[:, None]
        n = self.noise
        sig = np.array([n.sigma_ba] * 3 + [n.sigma_bg] * 3)[None, :] * np.sqrt(dt)
        return 1.0 / sig

    def is_connected(self) -> bool:
        n = self.num_nodes
        rows = list(range(n - 1))
        cols = list(range(1, n))
        lever = n
        for idx in (self.pos_idx, self.mb_idx):
            rows += list(idx)
            cols += [lever] * len(idx)
        if n == 1 and not rows:
            return True
        A = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n + 1, n + 1))
        ncomp, labels = connected_components(A, directed=False)
        # the lever-arm variable may legitimately be isolated only if no GNSS factor exists
        used = labels[:n] if len(rows) == n - 1 else labels
        return len(np.unique(used)) == 1

    def copy_pims(self) -> list[PreintegratedImu]:
        return list(self.pims)


def _merge_times(*streams: np.ndarray) -> np.ndarray:
    t = np.sort(np.concatenate([s for s in streams if len(s)]))
    if len(t) == 0:
        return t
    keep = np.concatenate([[True], np.diff(t) > NODE_MERGE_TOL])
    return t[keep]


def _match(node_t: np.ndarray, meas_t: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(node_t, meas_t), 0, len(node_t) - 1)
    prev = np.clip(idx - 1, 0, len(node_t) - 1)
    use_prev = np.abs(node_t[prev] - meas_t) < np.abs(node_t[idx] - meas_t)
    idx = np.where(use_prev, prev, idx)
    return np.where(np.abs(node_t[idx] - meas_t) <= NODE_MERGE_TOL, idx, -1)


def check_gaps(imu: ImuMeasurements, factor: float = 3.0) -> float:
    if len(imu) < 2:
        raise GapError("IMU stream too short")
    d = np.diff(imu.t)
    nominal = float(np.median(d))
    bad = np.nonzero(d > factor * nominal)[0]
    if len(bad):
        raise GapError(f"IMU gap of {d[bad[0]]:.4f} s at t={imu.t[bad[0]]:.4f} s")
    return nominal


def build_graph(imu: ImuMeasurements, positions: GnssPositions, baselines: MovingBaselines | None,
                noise: NoiseConfig | None = None, calibration: Calibration | None = None,
                use_baseline: bool = True, heading_offset: float = 0.0, initial_yaw: float = 0.0,
                init_count: int = 200, x0: NavState | None = None,
                sigma_lever: float | None = None) -> FactorGraph:
    """One node per GNSS epoch; IMU factors between consecutive nodes; prior on the first node.

    ``calibration`` holds the CAD lever arms and bias guesses, used as prior
    means. The baseline stream, when present, seeds the TRIAD heading even
    with ``use_baseline`` False (the position-only configuration).
    ``heading_offset`` (rad) yaws the initial prior.
    """
    noise = noise or NoiseConfig()
    calibration = calibration or Calibration()
    nominal = check_gaps(imu)
    baselines = baselines if baselines is not None and len(baselines) else None
    cad_b = calibration.r_BM - calibration.r_BP
    diagnostics = []
    if baselines is not None:
        if np.linalg.norm(cad_b) == 0:
            raise EstimatorError("a moving-baseline stream needs distinct CAD antenna positions")
        n_raw = len(baselines)
        baselines = baselines.guarded(cad_b)
        if len(baselines) < n_raw:
            diagnostics.append(f"dropped {n_raw - len(baselines)} moving-baseline outliers")
        if len(baselines) == 0:
            baselines = None
    for s in (positions, baselines):
        if s is not None and len(s.t) > 1 and np.any(np.diff(s.t) <= 0):
            raise EstimatorError("GNSS streams must be strictly time-sorted")
    node_t = _merge_times(positions.t, baselines.t if (baselines is not None and use_baseline) else np.zeros(0))
    lo, hi = imu.t[0] - 1e-9, imu.t[-1] + 1e-9
    node_t = node_t[(node_t >= lo) & (node_t <= hi)]
    if len(node_t) == 0:
        raise EstimatorError("no GNSS epoch lies inside the IMU span")

    bias0 = calibration.bias.copy()
    if init_count:
        bias0[3:] = gyro_bias_init(imu, init_count, noise.sigma_g)
    if x0 is None:
        k = min(max(init_count, 1), len(imu))
        acc0 = imu.acc[:k].mean(axis=0) - bias0[:3]
        if baselines is not None:
            R0 = triad_init(acc0, baselines.r_PM[0], cad_b)
        else:
            R0 = triad_init(acc0, [math.cos(initial_yaw), math.sin(initial_yaw), 0.0], [1.0, 0.0, 0.0])
        R0 = Rot3.rz(heading_offset) @ R0
        j = int(np.argmin(np.abs(positions.t - node_t[0])))
        x0 = NavState(node_t[0], initial_position(positions.r_IP[j], R0, calibration.r_BP), np.zeros(3), R0)
    else:
        x0 = NavState(node_t[0], x0.r_IB, x0.v_B, Rot3.rz(heading_offset) @ x0.R_IB)

    pims = []
    for t0, t1 in zip(node_t[:-1], node_t[1:]):
        ts, acc, gyr = interval_samples(imu, t0, t1)
        if len(ts) > 2 and np.max(np.diff(ts)) > 3.0 * nominal:
            raise GapError(f"IMU gap inside interval starting at {t0:.4f} s")
        pims.append(_preintegrate_arrays(ts, acc, gyr, bias0, noise.sigma_a, noise.sigma_g))

    pidx = _match(node_t, positions.t)
    ok = pidx >= 0
    pos_idx, pos_z, pos_L = pidx[ok], positions.r_IP[ok], sqrt_info_from_cov(positions.cov[ok])
    if baselines is not None and use_baseline:
        midx = _match(node_t, baselines.t)
        okm = midx >= 0
        mb_idx, mb_z, mb_L = midx[okm], baselines.r_PM[okm], sqrt_info_from_cov(baselines.cov[okm])
    else:
        mb_idx, mb_z, mb_L = np.zeros(0, int), np.zeros((0, 3)), np.zeros((0, 3, 3))

    sl = noise.prior_lever if sigma_lever is None else sigma_lever
    prior = Prior(
        x0=x0, bias0=bias0, lever0=calibration.lever.copy(),
        sigma_x=np.array([noise.prior_position] * 3 + [noise.prior_velocity] * 3
                         + [noise.prior_rp, noise.prior_rp, noise.prior_yaw]),
        sigma_bias=np.array([noise.prior_ba] * 3 + [noise.prior_bg] * 3),
        sigma_lever=np.full(6, sl))
    g = FactorGraph(node_t, pims, pos_idx.astype(int), pos_z, pos_L, mb_idx.astype(int), mb_z, mb_L,
                    prior, noise, imu, cad_b, diagnostics)
    if not g.is_connected():
        raise EstimatorError("factor graph is not connected")
    return g
