"""Ground-truth motion generators and sensor stream synthesis."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import PoseSeries, euler_zyx_matrix, matrices_to_quats
from .estimator.types import FIX_RTK, GnssPositions, ImuMeasurements, MovingBaselines

IMU_RATE = 1000.0
POSITION_RATE = 10.0
BASELINE_RATE = 5.0
GRAVITY = 9.8066


@dataclass
class GroundTruth:
    """Dense kinematic state; ``omega_B`` is the body angular rate."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    R: np.ndarray
    omega_B: np.ndarray

    def __len__(self):
        return len(self.t)

    def poses(self) -> PoseSeries:
        return PoseSeries(self.t, self.p, matrices_to_quats(self.R))

    def subsample(self, step: int) -> "GroundTruth":
        s = slice(None, None, step)
        return GroundTruth(self.t[s], self.p[s], self.v[s], self.a[s], self.R[s], self.omega_B[s])


def _smoothstep(x: np.ndarray):
    """Quintic 0->1 ramp and its first two derivatives (C2 at both ends)."""
    x = np.clip(x, 0.0, 1.0)
    s = x**3 * (10 - 15 * x + 6 * x * x)
    ds = 30 * x * x * (1 - x) ** 2
    dds = 60 * x * (1 - x) * (1 - 2 * x)
    return s, ds, dds


def _envelope(t, start, ramp):
    if ramp <= 0:
        on = (t >= start).astype(float)
        return on, np.zeros_like(t), np.zeros_like(t)
    s, ds, dds = _smoothstep((t - start) / ramp)
    return s, ds / ramp, dds / ramp**2


def _euler_rates_to_body(roll, pitch, droll, dpitch, dyaw):
    return np.column_stack([
        droll - dyaw * np.sin(pitch),
        dpitch * np.cos(roll) + dyaw * np.sin(roll) * np.cos(pitch),
        -dpitch * np.sin(roll) + dyaw * np.cos(roll) * np.cos(pitch)])


def _times(duration: float, rate: float, t0: float = 0.0) -> np.ndarray:
    n = int(round(duration * rate))
    return t0 + np.arange(n + 1) / rate if n > 0 else np.zeros(0)


@dataclass
class CircleMotion:
    """Level circular flight with tangential heading, optional start-up and attitude wobble."""

    radius: float
    speed: float
    altitude: float
    center: tuple = (0.0, 0.0)
    start_angle: float = 0.0
    clockwise: bool = True
    standstill: float = 0.0
    ramp: float = 0.0
    wobble_amp: float = 0.0
    wobble_freq: tuple = (0.31, 0.47)

    def __post_init__(self):
        if not (self.radius > 0 and self.speed > 0):
            raise ValueError("radius and speed must be positive")

    def evaluate(self, t) -> GroundTruth:
        t = np.asarray(t, dtype=float)
        v, r = self.speed, self.radius
        tau = t - self.standstill
        if self.ramp > 0:
            x = np.clip(tau / self.ramp, 0.0, 1.0)
            s_ram, ds_ram, _ = _smoothstep(x)
            # arc length integrates the quintic speed ramp
            arc_ramp = v * self.ramp * (2.5 * x**4 - 3 * x**5 + x**6)
            arc = np.where(tau <= self.ramp, arc_ramp, v * self.ramp * 0.5 + v * (tau - self.ramp))
            speed = np.where(tau <= self.ramp, v * s_ram, v)
            acc_t = np.where(tau <= self.ramp, v * ds_ram / self.ramp, 0.0)
        else:
            arc, speed, acc_t = v * np.maximum(tau, 0.0), np.where(tau >= 0, v, 0.0), np.zeros_like(t)
        arc = np.where(tau < 0, 0.0, arc)
        sgn = -1.0 if self.clockwise else 1.0
        th = self.start_angle + sgn * arc / r
        dth = sgn * speed / r
        ddth = sgn * acc_t / r
        c, s = np.cos(th), np.sin(th)
        p = np.column_stack([self.center[0] + r * c, self.center[1] + r * s, np.full_like(t, self.altitude)])
        vel = np.column_stack([-r * s * dth, r * c * dth, np.zeros_like(t)])
        acc = np.column_stack([-r * s * ddth - r * c * dth**2, r * c * ddth - r * s * dth**2, np.zeros_like(t)])
        yaw = th + sgn * math.pi / 2
        dyaw = dth
        e, de, _ = _envelope(t, self.standstill, max(self.ramp, 1e-9))
        A = self.wobble_amp
        w1, w2 = (2 * math.pi * f for f in self.wobble_freq)
        roll = A * e * np.sin(w1 * t)
        droll = A * (de * np.sin(w1 * t) + e * w1 * np.cos(w1 * t))
        pitch = A * e * np.sin(w2 * t + 0.7)
        dpitch = A * (de * np.sin(w2 * t + 0.7) + e * w2 * np.cos(w2 * t + 0.7))
        R = euler_zyx_matrix(yaw, pitch, roll)
        om = _euler_rates_to_body(roll, pitch, droll, dpitch, dyaw)
        return GroundTruth(t, p, vel, acc, R, om)


def analytic_circle_truth(r: float, v: float, alt: float, duration: float, rate: float = IMU_RATE,
                          **kwargs) -> GroundTruth:
    """Uniform circular motion sampled at ``rate`` over [0, duration]."""
    return CircleMotion(r, v, alt, **kwargs).evaluate(_times(duration, rate))


class _Osc:
    """Sum of sinusoids with analytic first and second derivatives."""

    def __init__(self, amps, freqs, phases):
        self.A, self.w, self.ph = (np.asarray(x, dtype=float) for x in (amps, freqs, phases))

    def __call__(self, t):
        arg = np.outer(t, self.w) + self.ph
        s, c = np.sin(arg), np.cos(arg)
        return s @ self.A, c @ (self.A * self.w), -(s @ (self.A * self.w**2))


@dataclass
class SwingMotion:
    """Randomized rope swing under a fixed pivot, starting from rest.

    The bob follows a sum of near-pendulum-frequency sinusoids in x and y
    with the small-angle bowl for z; tilt follows the rope direction and the
    platform slowly twists about the rope.
    """

    seed: int = 0
    length: float = 2.0
    pivot: tuple = (0.0, 0.0, 3.0)
    amplitude: float = 0.8
    standstill: float = 2.0
    ramp: float = 4.0
    tilt_gain: float = 1.0
    twist: float = 0.6
    components: int = 3

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        w0 = math.sqrt(GRAVITY / self.length)
        k = self.components
        def osc(amp):
            a = rng.uniform(0.5, 1.0, k)
            a *= amp / a.sum()
            return _Osc(a, w0 * rng.uniform(0.85, 1.15, k), rng.uniform(0, 2 * math.pi, k))
        self._x = osc(self.amplitude)
        self._y = osc(self.amplitude)
        self._yaw = _Osc(self.twist * rng.uniform(0.5, 1.0, 2), rng.uniform(0.1, 0.4, 2),
                         rng.uniform(0, 2 * math.pi, 2))
        self._yaw0 = rng.uniform(-math.pi, math.pi)

    def evaluate(self, t) -> GroundTruth:
        t = np.asarray(t, dtype=float)
        e, de, dde = _envelope(t, self.standstill, self.ramp)
        def modulated(osc):
            f, df, ddf = osc(t)
            return e * f, de * f + e * df, dde * f + 2 * de * df + e * ddf
        x, dx, ddx = modulated(self._x)
        y, dy, ddy = modulated(self._y)
        L = self.length
        z0 = self.pivot[2] - L
        z = z0 + (x * x + y * y) / (2 * L)
        dz = (x * dx + y * dy) / L
        ddz = (dx * dx + x * ddx + dy * dy + y * ddy) / L
        k = self.tilt_gain
        pitch, dpitch = k * x / L, k * dx / L
        roll, droll = -k * y / L, -k * dy / L
        yw, dyw, _ = modulated(self._yaw)
        yaw = self._yaw0 + yw
        R = euler_zyx_matrix(yaw, pitch, roll)
        om = _euler_rates_to_body(roll, pitch, droll, dpitch, dyw)
        p = np.column_stack([self.pivot[0] + x, self.pivot[1] + y, z])
        return GroundTruth(t, p, np.column_stack([dx, dy, dz]), np.column_stack([ddx, ddy, ddz]), R, om)


def swing_truth(duration: float, seed: int = 0, rate: float = IMU_RATE, **kwargs) -> GroundTruth:
    if not duration > 0:
        raise ValueError("duration must be positive")
    return SwingMotion(seed=seed, **kwargs).evaluate(_times(duration, rate))


# --------------------------------------------------------------------------
# sensors

def emit_imu(truth: GroundTruth, b_a=(0, 0, 0), b_g=(0, 0, 0), sigma_a: float = 0.0,
             sigma_g: float = 0.0, seed: int = 0, gravity: float = GRAVITY) -> ImuMeasurements:
    """Specific force R^T (a - g) and body rate, plus constant biases and white noise."""
    rng = np.random.default_rng(seed)
    g_vec = np.array([0.0, 0.0, -gravity])
    RT = np.swapaxes(truth.R, 1, 2)
    acc = np.einsum("kij,kj->ki", RT, truth.a - g_vec) + np.asarray(b_a, float)
    gyr = truth.omega_B + np.asarray(b_g, float)
    if len(truth) > 1:
        dt = float(np.median(np.diff(truth.t)))
        if sigma_a > 0:
            acc = acc + rng.normal(0.0, sigma_a / math.sqrt(dt), acc.shape)
        if sigma_g > 0:
            gyr = gyr + rng.normal(0.0, sigma_g / math.sqrt(dt), gyr.shape)
    return ImuMeasurements(truth.t.copy(), acc, gyr)


def _epoch_indices(truth: GroundTruth, rate: float) -> np.ndarray:
    if len(truth) == 0:
        return np.zeros(0, int)
    dt = float(np.median(np.diff(truth.t))) if len(truth) > 1 else 1.0
    step = max(int(round(1.0 / (rate * dt))), 1)
    return np.arange(0, len(truth), step)


@dataclass
class GnssNoise:
    position_cov: np.ndarray = field(default_factory=lambda: np.diag([0.003**2, 0.003**2, 0.006**2]))
    baseline_cov: np.ndarray = field(default_factory=lambda: np.diag([0.003**2, 0.003**2, 0.006**2]))
    fix_mode: str = FIX_RTK


def emit_gnss(truth: GroundTruth, r_BP, r_BM, pos_rate: float = POSITION_RATE,
              mb_rate: float = BASELINE_RATE, noise: GnssNoise | None = None, seed: int = 0,
              zero_noise: bool = False, latency: float = 0.0) -> tuple[GnssPositions, MovingBaselines]:
    """Antenna position at ``pos_rate`` and inertial-frame baseline at ``mb_rate``."""
    noise = noise or GnssNoise()
    rng = np.random.default_rng(seed + 7919)
    r_BP, r_BM = np.asarray(r_BP, float), np.asarray(r_BM, float)
    ip = _epoch_indices(truth, pos_rate)
    im = _epoch_indices(truth, mb_rate)
    zp = truth.p[ip] + truth.R[ip] @ r_BP
    zm = truth.R[im] @ (r_BM - r_BP)
    if not zero_noise:
        zp = zp + rng.normal(size=zp.shape) @ np.linalg.cholesky(noise.position_cov).T
        zm = zm + rng.normal(size=zm.shape) @ np.linalg.cholesky(noise.baseline_cov).T
    pos = GnssPositions(truth.t[ip], zp, np.repeat(noise.position_cov[None], len(ip), 0),
                        (noise.fix_mode,) * len(ip), np.full(len(ip), latency))
    mb = MovingBaselines(truth.t[im], zm, np.repeat(noise.baseline_cov[None], len(im), 0),
                         np.full(len(im), latency))
    return pos, mb


def emit_attitude(truth: GroundTruth, rate: float = 50.0, sigma: float = 0.0, seed: int = 0,
                  ) -> PoseSeries:
    """Autopilot attitude samples (positions zero) for the DJI+RTK comparison chain."""
    from .core import batch_exp
    rng = np.random.default_rng(seed + 104729)
    idx = _epoch_indices(truth, rate)
    R = truth.R[idx]
    if sigma > 0:
        R = R @ batch_exp(rng.normal(0.0, sigma, (len(idx), 3)))
    return PoseSeries(truth.t[idx], np.zeros((len(idx), 3)), matrices_to_quats(R))


def emit_altimeter(truth: GroundTruth, ground_height: float = 0.0, sigma: float = 0.02,
                   rate: float = 50.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Slant range along the body -z axis to a flat ground plane."""
    rng = np.random.default_rng(seed + 1299709)
    idx = _epoch_indices(truth, rate)
    down = -truth.R[idx][:, :, 2]
    h = truth.p[idx, 2] - ground_height
    rng_m = h / np.maximum(-down[:, 2], 1e-6) + rng.normal(0.0, sigma, len(idx))
    return truth.t[idx], rng_m


def trajectory_truth(traj, rate: float = IMU_RATE, gravity: float = GRAVITY) -> GroundTruth:
    """Ground truth of a planned trajectory through differential flatness.

    The body z axis follows the thrust direction a + g e_z and the heading
    follows the yaw polynomial. Body rates use the exact relation for this
    attitude construction, so the IMU stream stays consistent with the poses.
    """
    t = np.minimum(_times(traj.duration, rate, traj.t0), traj.t_end)
    if len(t) == 0:
        t = np.array([traj.t0])
    s = traj.sample_many(t)
    thrust = s["acceleration"] + np.array([0.0, 0.0, gravity])
    u = np.linalg.norm(thrust, axis=1)
    zb = thrust / u[:, None]
    psi, dpsi = s["yaw"], s["yaw_rate"]
    yc = np.column_stack([-np.sin(psi), np.cos(psi), np.zeros_like(psi)])
    xb = np.cross(yc, zb)
    xb /= np.linalg.norm(xb, axis=1, keepdims=True)
    yb = np.cross(zb, xb)
    R = np.stack([xb, yb, zb], axis=2)
    j = s["jerk"]
    h = (j - np.sum(zb * j, axis=1)[:, None] * zb) / u[:, None]
    p_rate = -np.sum(h * yb, axis=1)
    q_rate = np.sum(h * xb, axis=1)
    xc = np.column_stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)])
    yc_zb = np.sum(yc * zb, axis=1)
    r_rate = (dpsi * np.sum(xc * xb, axis=1) + q_rate * yc_zb) / np.linalg.norm(np.cross(yc, zb), axis=1)
    om = np.column_stack([p_rate, q_rate, r_rate])
    return GroundTruth(t, s["position"], s["velocity"], s["acceleration"], R, om)


# --------------------------------------------------------------------------
# radar

@dataclass(frozen=True)
class PointTarget:
    position: tuple
    reflectivity: complex = 1.0


def _radar_gate(L: np.ndarray, margin: float, spacing: float) -> tuple[float, int]:
    half = 0.5 * L
    lo = math.floor((half.min() - margin) / spacing) * spacing
    n = int(math.ceil((half.max() + margin - lo) / spacing)) + 1
    return max(lo, 0.0), n


def emit_radar(tx, rx, targets, cfg=None, rate: float = 200.0, seed: int = 0, noise_std: float = 0.0,
               t=None, bin_spacing: float = 0.01, start_range: float | None = None,
               num_bins: int | None = None, chunk: int = 2048, dtype=np.complex64):
    """Range-compressed pulses of point targets seen from TX/RX antenna pose series.

    Every target contributes ``reflectivity * sinc((r - L/2) / (c/2B))`` on the
    half-optical-path axis ``r`` with phase ``+2 pi f_c L / c``. ``L`` comes from
    :func:`gpsar.sar.optical_paths`, the same model the imager compensates.
    Without ``start_range``/``num_bins`` the range gate spans all targets
    with three resolution cells of margin. Samples are single precision like
    the pulse file unless ``dtype`` asks for more.
    """
    from .sar import RadarPulses, SarConfig, optical_paths

    cfg = cfg or SarConfig()
    if t is None:
        t0, t1 = max(tx.t[0], rx.t[0]), min(tx.t[-1], rx.t[-1])
        t = t0 + np.arange(int(math.floor((t1 - t0) * rate + 1e-9)) + 1) / rate
    t = np.asarray(t, float)
    targets = [tg if isinstance(tg, PointTarget) else PointTarget(*tg) for tg in targets]
    ptx = tx.interpolate(t).position if len(t) else np.zeros((0, 3))
    prx = rx.interpolate(t).position if len(t) else np.zeros((0, 3))
    if targets and len(t):
        cells = np.array([tg.position for tg in targets], float)
        L_all = optical_paths(ptx, prx, cells, cfg)
    else:
        L_all = np.zeros((len(t), 0))
    if start_range is None or num_bins is None:
        if L_all.size:
            start_range, num_bins = _radar_gate(L_all, 3.0 * cfg.resolution, bin_spacing)
        else:
            start_range, num_bins = 0.0, 1
    ranges = start_range + bin_spacing * np.arange(num_bins)
    data = np.zeros((len(t), num_bins), dtype)
    refl = np.array([complex(tg.reflectivity) for tg in targets])
    k = 2.0 * math.pi * cfg.f_c / cfg.c
    for c0 in range(0, len(t), chunk):
        sl = slice(c0, c0 + chunk)
        L = L_all[sl]
        block = np.zeros((L.shape[0], num_bins), complex)
        for m in range(L.shape[1]):
            env = np.sinc((ranges[None, :] - 0.5 * L[:, m:m + 1]) / cfg.resolution)
            block += refl[m] * env * np.exp(1j * k * L[:, m:m + 1])
        data[sl] = block
    if noise_std > 0 and len(t):
        rng = np.random.default_rng(seed + 15485863)
        scale = noise_std / math.sqrt(2.0)
        data += (rng.normal(0.0, scale, data.shape) + 1j * rng.normal(0.0, scale, data.shape)).astype(dtype)
    return RadarPulses(t, data, bin_spacing, float(start_range), cfg.f_c)


# --------------------------------------------------------------------------
# scenarios

def _pose_from_dict(d) -> "Pose3":
    from .core import Pose3, Rot3
    if d is None:
        return Pose3()
    q = d.get("quat", [1.0, 0.0, 0.0, 0.0])
    return Pose3(Rot3(np.asarray(q, float)), np.asarray(d.get("translation", [0.0, 0.0, 0.0]), float))


def sar_config_from_dict(r: dict, **overrides):
    """SarConfig from the JSON radar block (antenna extrinsics as translation + optional quat)."""
    from .sar import SarConfig
    kw = dict(f_c=float(r.get("f_c", 2.5e9)), bandwidth=float(r.get("bandwidth", 3e9)),
              eps_r=float(r.get("eps_r", 1.0)), surface_height=float(r.get("surface_height", 0.0)),
              T_BS_tx=_pose_from_dict(r.get("T_BS_tx")), T_BS_rx=_pose_from_dict(r.get("T_BS_rx")),
              weighting=str(r.get("weighting", "uniform")), range_bias=float(r.get("range_bias", 0.0)))
    kw.update(overrides)
    return SarConfig(**kw)


@dataclass
class ScenarioConfig:
    """Everything needed to regenerate one simulated data set.

    ``source`` selects the motion: ``circle`` (parameters in ``circle``),
    ``swing`` (keyword arguments of :class:`SwingMotion` in ``swing``) or
    ``trajectory`` (a serialized planned trajectory in ``trajectory``).
    The radar is only simulated when ``targets`` is non-empty.
    """

    source: str = "circle"
    duration: float = 60.0
    circle: dict = field(default_factory=lambda: {"radius": 7.5, "speed": 1.0, "altitude": 2.0})
    swing: dict = field(default_factory=dict)
    trajectory: dict | None = None
    imu_rate: float = IMU_RATE
    position_rate: float = POSITION_RATE
    baseline_rate: float = BASELINE_RATE
    attitude_rate: float = 50.0
    radar_rate: float = 200.0
    sigma_a: float = 2e-3
    sigma_g: float = 2e-4
    position_sigma: tuple = (0.003, 0.003, 0.006)
    baseline_sigma: tuple = (0.003, 0.003, 0.006)
    attitude_sigma: float = 0.0
    b_a: tuple = (0.0, 0.0, 0.0)
    b_g: tuple = (0.0, 0.0, 0.0)
    r_BP: tuple = (0.1, 0.05, 0.25)
    r_BM: tuple = (-0.4, 0.05, 0.25)
    radar: dict = field(default_factory=lambda: {
        "f_c": 2.5e9, "bandwidth": 3e9, "eps_r": 1.0, "surface_height": 0.0,
        "T_BS_tx": {"translation": [0.1, 0.05, -0.1]}, "T_BS_rx": {"translation": [0.1, -0.05, -0.1]}})
    targets: list = field(default_factory=list)
    radar_noise: float = 0.0
    bin_spacing: float = 0.01
    zero_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("circle", "swing", "trajectory"):
            raise ValueError(f"unknown trajectory source {self.source!r}")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        for name in ("imu_rate", "position_rate", "baseline_rate", "attitude_rate", "radar_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.source == "trajectory" and self.trajectory is None:
            raise ValueError("trajectory source needs a serialized trajectory")

    def sar_config(self):
        return sar_config_from_dict(self.radar)

    def noise(self) -> GnssNoise:
        return GnssNoise(np.diag(np.square(self.position_sigma)), np.diag(np.square(self.baseline_sigma)))

    def to_dict(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        d = dict(d)
        for k in ("position_sigma", "baseline_sigma", "b_a", "b_g", "r_BP", "r_BM"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)


@dataclass
class Scenario:
    config: ScenarioConfig
    truth: GroundTruth
    imu: ImuMeasurements
    positions: GnssPositions
    baselines: MovingBaselines
    attitude: PoseSeries
    radar: object = None


def scenario_truth(cfg: ScenarioConfig) -> GroundTruth:
    if cfg.source == "circle":
        return CircleMotion(**cfg.circle).evaluate(_times(cfg.duration, cfg.imu_rate))
    if cfg.source == "swing":
        return SwingMotion(seed=cfg.seed, **cfg.swing).evaluate(_times(cfg.duration, cfg.imu_rate))
    from .trajectory import Trajectory
    traj = Trajectory.from_dict(cfg.trajectory)
    truth = trajectory_truth(traj, cfg.imu_rate)
    if cfg.duration > 0:
        keep = truth.t <= traj.t0 + cfg.duration + 1e-9
        truth = GroundTruth(truth.t[keep], truth.p[keep], truth.v[keep], truth.a[keep], truth.R[keep],
                            truth.omega_B[keep])
    return truth


def simulate(cfg: ScenarioConfig) -> Scenario:
    """All sensor streams of one scenario; identical configs give identical streams."""
    truth = scenario_truth(cfg)
    zero = cfg.zero_noise
    imu = emit_imu(truth, cfg.b_a, cfg.b_g, 0.0 if zero else cfg.sigma_a, 0.0 if zero else cfg.sigma_g,
                   seed=cfg.seed)
    pos, mb = emit_gnss(truth, cfg.r_BP, cfg.r_BM, cfg.position_rate, cfg.baseline_rate, cfg.noise(),
                        seed=cfg.seed, zero_noise=zero)
    att = emit_attitude(truth, cfg.attitude_rate, 0.0 if zero else cfg.attitude_sigma, seed=cfg.seed)
    radar = None
    if cfg.targets and len(truth) > 1:
        from .sar import antenna_series
        sar = cfg.sar_config()
        tx, rx = antenna_series(truth.poses(), sar)
        targets = [PointTarget(tuple(tg["position"]), complex(tg.get("reflectivity", 1.0)))
                   if isinstance(tg, dict) else tg for tg in cfg.targets]
        radar = emit_radar(tx, rx, targets, sar, cfg.radar_rate, cfg.seed,
                           0.0 if zero else cfg.radar_noise, bin_spacing=cfg.bin_spacing)
    return Scenario(cfg, truth, imu, pos, mb, att, radar)


def six_circle_truth(diameter: float = 15.0, speed: float = 1.0, altitudes=(2.0, 2.4, 2.8, 3.2, 3.6, 4.0),
                     center=(0.0, 0.0), rate: float = IMU_RATE) -> GroundTruth:
    """Stacked level circles around ``center``, one full turn per altitude.

    The circles are concatenated in time; the altitude steps between them
    are position jumps, so the result is meant for pose-driven imaging only.
    """
    r = 0.5 * diameter
    dur = 2 * math.pi * r / speed
    parts = []
    for i, alt in enumerate(altitudes):
        t = _times(dur, rate, i * dur)
        if i > 0:
            t = t[1:]
        m = CircleMotion(r, speed, alt, center=tuple(center))
        g = m.evaluate(t - i * dur)
        parts.append(GroundTruth(t, g.p, g.v, g.a, g.R, g.omega_B))
    return GroundTruth(*(np.concatenate([getattr(p, k) for p in parts]) for k in
                         ("t", "p", "v", "a", "R", "omega_B")))
