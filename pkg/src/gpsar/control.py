"""Trajectory tracking controller, velocity-tracking plant and AGL filter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import wrap_angle
from .trajectory import FlatState, Trajectory


@dataclass
class Gains:
    K_p: np.ndarray = field(default_factory=lambda: np.diag([8.0, 8.0, 8.0]))
    K_v: np.ndarray = field(default_factory=lambda: np.eye(3))
    K_a: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(3))
    K_psi: float = 2.0
    K_psi_rate: float = 0.5

    def __post_init__(self):
        for name in ("K_p", "K_v", "K_a"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = np.diag(m)
            if np.any(np.diag(m) < 0):
                raise ValueError(f"{name} must be non-negative")
            setattr(self, name, m)
        if self.K_psi < 0 or self.K_psi_rate < 0:
            raise ValueError("yaw gains must be non-negative")


@dataclass
class CommandLimits:
    max_horizontal_speed: float = 3.0
    max_vertical_speed: float = 1.0
    max_yaw_rate: float = 1.0


@dataclass
class VehicleState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    yaw_rate: float = 0.0


def limit_command(v_ctrl: np.ndarray, yaw_rate: float, limits: CommandLimits) -> tuple[np.ndarray, float]:
    """Norm-preserving horizontal clamp, independent vertical and yaw-rate clamps."""
    v = np.array(v_ctrl, dtype=float)
    h = np.linalg.norm(v[:2])
    if h > limits.max_horizontal_speed:
        v[:2] *= limits.max_horizontal_speed / h
    v[2] = np.clip(v[2], -limits.max_vertical_speed, limits.max_vertical_speed)
    return v, float(np.clip(yaw_rate, -limits.max_yaw_rate, limits.max_yaw_rate))


def track(ref: FlatState, est: VehicleState, gains: Gains, limits: CommandLimits) -> tuple[np.ndarray, float]:
    v_ctrl = (gains.K_p @ (ref.position - est.position)
              + gains.K_v @ (ref.velocity - est.velocity)
              + gains.K_a @ (ref.acceleration - est.acceleration))
    yaw_rate = (gains.K_psi * wrap_angle(ref.yaw - est.yaw)
                + gains.K_psi_rate * (ref.yaw_rate - est.yaw_rate))
    return limit_command(v_ctrl, yaw_rate, limits)


def vehicle_step(state: VehicleState, v_ctrl, yaw_rate_ctrl: float, dt: float,
                 tau_v: float = 0.3, rng: np.random.Generator | None = None,
                 velocity_noise: float = 0.0) -> VehicleState:
    """First-order velocity-tracking plant with ideal yaw-rate tracking."""
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1]")
    v_ctrl = np.asarray(v_ctrl, dtype=float)
    alpha = 1.0 - math.exp(-dt / tau_v) if tau_v > 0 else 1.0
    v_new = state.velocity + alpha * (v_ctrl - state.velocity)
    if rng is not None and velocity_noise > 0:
        v_new = v_new + rng.normal(0.0, velocity_noise, 3)
    acc = (v_new - state.velocity) / dt
    if tau_v > 0:
        pos = state.position + 0.5 * (state.velocity + v_new) * dt
    else:
        pos = state.position + v_new * dt
    return VehicleState(pos, v_new, acc, float(wrap_angle(state.yaw + yaw_rate_ctrl * dt)), float(yaw_rate_ctrl))


def simulate_tracking(traj: Trajectory, dt: float = 0.02, gains: Gains | None = None,
                      limits: CommandLimits | None = None, tau_v: float = 0.3) -> dict[str, np.ndarray]:
    """Closed-loop run of the tracking controller along a planned trajectory."""
    gains = gains or Gains()
    limits = limits or CommandLimits()
    t = np.arange(traj.t0, traj.t_end, dt)
    ref = traj.sample_many(t)
    st = VehicleState(ref["position"][0].copy(), np.zeros(3), np.zeros(3), float(ref["yaw"][0]), 0.0)
    p = np.zeros((len(t), 3))
    cmds = np.zeros((len(t), 3))
    for k in range(len(t)):
        fs = FlatState(ref["position"][k], ref["velocity"][k], ref["acceleration"][k],
                       ref["jerk"][k], float(ref["yaw"][k]), float(ref["yaw_rate"][k]))
        v_c, r_c = track(fs, st, gains, limits)
        p[k] = st.position
        cmds[k] = v_c
        st = vehicle_step(st, v_c, r_c, dt, tau_v)
    return {"t": t, "p_ref": ref["position"], "p": p, "v_ctrl": cmds}


# --------------------------------------------------------------------------
# AGL estimation

@dataclass(frozen=True)
class AltitudeFilterState:
    estimate: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")


@dataclass(frozen=True)
class AltimeterParams:
    base_std: float = 0.05
    attitude_scale: float = 2.0
    attitude_cutoff: float = math.radians(30.0)
    gate: float = 3.0
    range_scale: float = 0.02
    max_range: float = 40.0

    def __post_init__(self):
        if not 0.0 < self.attitude_cutoff < math.pi / 2:
            raise ValueError("attitude cutoff must lie in (0, pi/2)")
        if self.gate <= 0:
            raise ValueError("gate must be positive")


def alt_predict(f: AltitudeFilterState, dz_dji: float, q: float) -> AltitudeFilterState:
    return AltitudeFilterState(f.estimate + dz_dji, f.variance + q)


def altimeter_std(range_m: float, roll: float, pitch: float, p: AltimeterParams) -> float:
    tilt = max(abs(roll), abs(pitch))
    return p.base_std * (1.0 + p.attitude_scale * tilt) * (1.0 + p.range_scale * range_m)


def alt_update(f: AltitudeFilterState, range_m: float, roll: float, pitch: float,
               params: AltimeterParams) -> tuple[AltitudeFilterState, bool]:
    if range_m < 0:
        raise ValueError("range must be non-negative")
    if max(abs(roll), abs(pitch)) > params.attitude_cutoff or range_m > params.max_range:
        return f, False
    z = range_m * math.cos(roll) * math.cos(pitch)
    r = altimeter_std(range_m, roll, pitch, params) ** 2
    s = f.variance + r
    innov = z - f.estimate
    if abs(innov) / math.sqrt(s) > params.gate:
        return f, False
    k = f.variance / s
    return AltitudeFilterState(f.estimate + k * innov, (1.0 - k) * f.variance), True


@dataclass
class AltitudeScenario:
    """Flat-terrain AGL profile with drifting DJI altitude and two altimeters."""

    duration: float = 120.0
    rate: float = 50.0
    high_agl: float = 30.0
    low_agl: float = 0.3
    dji_drift: float = 0.5
    dji_noise: float = 0.005
    radar: AltimeterParams = field(default_factory=lambda: AltimeterParams(base_std=0.05, max_range=50.0))
    lidar: AltimeterParams = field(default_factory=lambda: AltimeterParams(base_std=0.02, max_range=12.0))
    radar_noise: float = 0.05
    lidar_noise: float = 0.02
    q: float = 1e-4
    outlier_time: float | None = 30.0
    outlier_offset: float = -3.0
    seed: int = 0


def run_altitude_scenario(sc: AltitudeScenario) -> dict[str, np.ndarray]:
    """Descend from ``high_agl`` to ``low_agl``; returns per-sample log columns."""
    rng = np.random.default_rng(sc.seed)
    dt = 1.0 / sc.rate
    t = np.arange(0.0, sc.duration, dt)
    n = len(t)
    # hold high, descend over the middle third, hold low
    s = np.clip((t - sc.duration / 3) / (sc.duration / 3), 0.0, 1.0)
    s = s * s * (3 - 2 * s)
    agl = sc.high_agl + (sc.low_agl - sc.high_agl) * s
    roll = np.radians(3.0) * np.sin(0.7 * t)
    pitch = np.radians(3.0) * np.sin(0.5 * t + 1.0)
    dji = agl + sc.dji_drift * t / sc.duration + rng.normal(0.0, sc.dji_noise, n)
    slant = agl / (np.cos(roll) * np.cos(pitch))
    radar = slant + rng.normal(0.0, sc.radar_noise, n)
    lidar = slant + rng.normal(0.0, sc.lidar_noise, n)
    if sc.outlier_time is not None:
        k = int(round(sc.outlier_time / dt))
        if not 0 <= k < n:
            raise ValueError("outlier time outside the scenario span")
        radar[k] = slant[k] + sc.outlier_offset
        lidar[k] = slant[k] + sc.outlier_offset
    radar = np.maximum(radar, 0.0)
    lidar = np.maximum(lidar, 0.0)
    f = AltitudeFilterState(float(dji[0]), 1.0)
    est = np.zeros(n)
    acc_r = np.zeros(n, bool)
    acc_l = np.zeros(n, bool)
    for k in range(n):
        if k > 0:
            f = alt_predict(f, dji[k] - dji[k - 1], sc.q)
        f, acc_r[k] = alt_update(f, float(radar[k]), float(roll[k]), float(pitch[k]), sc.radar)
        f, acc_l[k] = alt_update(f, float(lidar[k]), float(roll[k]), float(pitch[k]), sc.lidar)
        est[k] = f.estimate
    return {"t": t, "agl_true": agl, "agl_est": est, "dji": dji, "radar": radar, "lidar": lidar,
            "accepted_radar": acc_r, "accepted_lidar": acc_l}


CONTROL_LOG_COLUMNS = ("t", "p_ref_x", "p_ref_y", "p_ref_z", "p_x", "p_y", "p_z",
                       "v_ctrl_x", "v_ctrl_y", "v_ctrl_z", "agl_est", "agl_true",
                       "accepted_radar", "accepted_lidar")


def write_control_log(path, tracking: dict, altitude: dict) -> None:
    """CSV log combining a tracking run and an AGL run sampled on the same clock."""
    t = tracking["t"]
    agl_est = np.interp(t, altitude["t"], altitude["agl_est"])
    agl_true = np.interp(t, altitude["t"], altitude["agl_true"])
    idx = np.clip(np.searchsorted(altitude["t"], t), 0, len(altitude["t"]) - 1)
    cols = np.column_stack([t, tracking["p_ref"], tracking["p"], tracking["v_ctrl"], agl_est, agl_true,
                            altitude["accepted_radar"][idx].astype(int),
                            altitude["accepted_lidar"][idx].astype(int)])
    np.savetxt(path, cols, delimiter=",", header=",".join(CONTROL_LOG_COLUMNS), comments="",
               fmt="%.9g")

