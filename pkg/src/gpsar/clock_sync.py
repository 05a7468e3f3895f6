"""PPS-disciplined oscillator servo: EKF on (offset, nominal voltage, gain) and LQR steering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ClockState:
    tau: float
    v0: float
    c_clk: float
    cov: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.array([self.tau, self.v0, self.c_clk])


@dataclass
class OscillatorTruth:
    v0: float = 1.65
    c_clk: float = 1.0e-6
    # process noise variances per second on (tau, V0, c_clk)
    Q: np.ndarray = field(default_factory=lambda: np.diag([(2e-9) ** 2, (1e-5) ** 2, (1e-10) ** 2]))
    R: float = (50e-9) ** 2
    dac_min: float = 0.0
    dac_max: float = 3.3
    dac_bits: int = 12
    period: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.dac_min) and math.isfinite(self.dac_max)) or self.dac_max <= self.dac_min:
            raise ValueError("DAC range must be finite and non-empty")
        if self.period <= 0:
            raise ValueError("control period must be positive")

    @property
    def dac_step(self) -> float:
        return (self.dac_max - self.dac_min) / (2 ** self.dac_bits - 1)


@dataclass
class ServoConfig:
    """Estimator prior and controller weights; the gain uses the nominal c_clk.

    The default prior on V0 is 50 mV off the default truth so the filter has work to do.
    """

    v0_nominal: float = 1.60
    c_nominal: float = 1.0e-6
    prior_std: tuple[float, float, float] = (10e-6, 0.1, 5e-7)
    q_lqr: float = 1.0
    r_lqr: float = 1e-12
    estimate: bool = True


def ekf_step(state: ClockState, u_prev: float, z: float | None, Q: np.ndarray, R: float,
             dt: float) -> ClockState:
    """Predict with the applied voltage ``u_prev`` then fuse the measured offset ``z``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    tau, v0, c = state.tau, state.v0, state.c_clk
    x = np.array([tau + dt * (u_prev - v0) * c, v0, c])
    F = np.array([[1.0, -dt * c, dt * (u_prev - v0)], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    P = F @ state.cov @ F.T + np.asarray(Q) * dt
    if z is not None:
        S = P[0, 0] + R
        K = P[:, 0] / S
        x = x + K * (z - x[0])
        # Joseph form keeps P symmetric positive definite
        IKH = np.eye(3) - np.outer(K, [1.0, 0.0, 0.0])
        P = IKH @ P @ IKH.T + R * np.outer(K, K)
    P = 0.5 * (P + P.T)
    return ClockState(float(x[0]), float(x[1]), float(x[2]), P)


def lqr_gain(c_clk: float, dt: float, q_lqr: float, r_lqr: float) -> float:
    """Scalar discrete LQR for tau[k+1] = tau[k] + dt*c*u, u = V_DAC - V0."""
    if c_clk == 0:
        raise ValueError("degenerate gain: c_clk is zero")
    b = dt * c_clk
    # scalar DARE: P = q + P - (P b)^2 / (r + b^2 P)  ->  P^2 b^2 - q b^2 P - q r = 0
    p = 0.5 * (q_lqr + math.sqrt(q_lqr**2 + 4.0 * q_lqr * r_lqr / b**2))
    return b * p / (r_lqr + b * b * p)


def dac_output(v: float, truth: OscillatorTruth) -> float:
    step = truth.dac_step
    code = round((min(max(v, truth.dac_min), truth.dac_max) - truth.dac_min) / step)
    return truth.dac_min + code * step


def control(state: ClockState, K_c: float, truth: OscillatorTruth) -> float:
    return dac_output(-K_c * state.tau + state.v0, truth)


@dataclass
class ServoRun:
    t: np.ndarray
    tau_true: np.ndarray
    tau_est: np.ndarray
    v_dac: np.ndarray
    states: list[ClockState]

    def to_csv(self, path) -> None:
        cols = np.column_stack([self.t, self.tau_true, self.tau_est, self.v_dac])
        np.savetxt(path, cols, delimiter=",", header="t,tau_true,tau_est,v_dac", comments="", fmt="%.12g")


def simulate_servo(truth: OscillatorTruth, tau0: float, steps: int, seed: int = 0,
                   cfg: ServoConfig | None = None, noise: bool = True) -> ServoRun:
    """One EKF + control update per PPS pulse.

    With ``cfg.estimate`` False the controller is fed the true V0 and c_clk.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = cfg or ServoConfig()
    rng = np.random.default_rng(seed)
    dt = truth.period
    if cfg.estimate:
        K_c = lqr_gain(cfg.c_nominal, dt, cfg.q_lqr, cfg.r_lqr)
        est = ClockState(0.0, cfg.v0_nominal, cfg.c_nominal, np.diag(np.square(cfg.prior_std)))
    else:
        K_c = lqr_gain(truth.c_clk, dt, cfg.q_lqr, cfg.r_lqr)
        est = ClockState(tau0, truth.v0, truth.c_clk, np.diag([1e-30, 1e-30, 1e-30]))
    Qs = np.sqrt(np.diag(truth.Q) * dt)
    tau = tau0
    v0_true, c_true = truth.v0, truth.c_clk
    u = dac_output(est.v0, truth)
    out_tau, out_est, out_u, states = [], [], [], []
    first = True
    for _ in range(steps):
        w = rng.normal(0.0, 1.0, 3) * Qs if noise else np.zeros(3)
        tau = tau + dt * (u - v0_true) * c_true + w[0]
        v0_true += w[1]
        c_true += w[2]
        z = tau + (rng.normal(0.0, math.sqrt(truth.R)) if noise else 0.0)
        if cfg.estimate:
            if first:
                # the first PPS capture initializes the offset
                est = ClockState(z, est.v0, est.c_clk, est.cov.copy())
                est.cov[0, 0] = truth.R
            else:
                est = ekf_step(est, u, z, truth.Q, truth.R, dt)
        else:
            est = ClockState(tau, v0_true, c_true, est.cov)
        first = False
        u = control(est, K_c, truth)
        out_tau.append(tau)
        out_est.append(est.tau)
        out_u.append(u)
        states.append(est)
    t = dt * np.arange(1, steps + 1)
    return ServoRun(t, np.array(out_tau), np.array(out_est), np.array(out_u), states)


def max_imu_delay(innovation: float, jerk_max: float, gnss_period: float) -> float:
    """Delay bound: innovation over the doubly integrated jerk across one GNSS period."""
    if innovation <= 0 or jerk_max < 0 or gnss_period <= 0:
        raise ValueError("arguments must be positive")
    denom = 0.5 * jerk_max * gnss_period * gnss_period
    return math.inf if denom == 0 else innovation / denom
