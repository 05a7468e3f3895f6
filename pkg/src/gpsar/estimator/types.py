"""Value types shared by the estimator modules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Rot3

FIX_RTK = "RTK"
FIX_SBAS = "SBAS"


class EstimatorError(ValueError):
    """Raised for malformed input streams or degenerate initialization."""


class GapError(EstimatorError):
    pass


class DegenerateTriadError(EstimatorError):
    pass


class MotionDetectedError(EstimatorError):
    pass


@dataclass(frozen=True)
class NavState:
    t: float
    r_IB: np.ndarray
    v_B: np.ndarray
    R_IB: Rot3

    def __post_init__(self):
        object.__setattr__(self, "r_IB", np.asarray(self.r_IB, dtype=float).reshape(3))
        object.__setattr__(self, "v_B", np.asarray(self.v_B, dtype=float).reshape(3))


@dataclass(frozen=True)
class Calibration:
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_BP: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_BM: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_lever: float = 1.0

    def __post_init__(self):
        for name in ("b_a", "b_g", "r_BP", "r_BM"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if np.linalg.norm(self.r_BP) >= self.max_lever or np.linalg.norm(self.r_BM) >= self.max_lever:
            raise EstimatorError(f"lever arm norm must stay below {self.max_lever} m")

    @property
    def bias(self) -> np.ndarray:
        return np.concatenate([self.b_a, self.b_g])

    @property
    def lever(self) -> np.ndarray:
        return np.concatenate([self.r_BP, self.r_BM])


@dataclass(frozen=True)
class NoiseConfig:
    """Continuous-time noise densities, bias random walks and prior sigmas.

    Defaults describe a tactical-grade MEMS IMU and RTK-grade GNSS; the
    prior sigmas are tuning choices.
    """

    sigma_a: float = 2e-3          # m/s^2/sqrt(Hz)
    sigma_g: float = 2e-4          # rad/s/sqrt(Hz)
    sigma_ba: float = 1e-4         # m/s^3/sqrt(Hz)
    sigma_bg: float = 1e-5         # rad/s^2/sqrt(Hz)
    prior_position: float = 1.0
    prior_velocity: float = 0.01
    prior_rp: float = np.radians(1.0)
    prior_yaw: float = np.radians(1.0)
    prior_ba: float = 0.05
    prior_bg: float = 1e-3
    prior_lever: float = 0.05
    gravity: float = 9.8066

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive")

    @property
    def g_vec(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])


@dataclass(frozen=True)
class ImuMeasurements:
    t: np.ndarray
    acc: np.ndarray
    gyr: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "acc", np.asarray(self.acc, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "gyr", np.asarray(self.gyr, dtype=float).reshape(-1, 3))
        if not (len(t) == len(self.acc) == len(self.gyr)):
            raise EstimatorError("IMU arrays differ in length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise EstimatorError("IMU timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def slice_time(self, t_end: float) -> "ImuMeasurements":
        k = int(np.searchsorted(self.t, t_end + 1e-9, side="right"))
        return ImuMeasurements(self.t[:k], self.acc[:k], self.gyr[:k])


def _check_cov(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float).reshape(-1, 3, 3)
    if not np.allclose(cov, np.swapaxes(cov, 1, 2)):
        raise EstimatorError("covariance must be symmetric")
    if np.any(np.linalg.eigvalsh(cov)[:, 0] <= 0):
        raise EstimatorError("covariance must be positive definite")
    return cov


@dataclass(frozen=True)
class GnssPositions:
    """Position-antenna fixes; ``fix_mode`` only changes the covariance used."""

    t: np.ndarray
    r_IP: np.ndarray
    cov: np.ndarray
    fix_mode: tuple = ()
    latency: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "r_IP", np.asarray(self.r_IP, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "cov", _check_cov(self.cov) if len(self.t) else np.zeros((0, 3, 3)))
        modes = tuple(self.fix_mode) or (FIX_RTK,) * len(self.t)
        object.__setattr__(self, "fix_mode", modes)
        if not (len(self.t) == len(self.r_IP) == len(self.cov) == len(modes)):
            raise EstimatorError("GNSS position arrays differ in length")

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class MovingBaselines:
    t: np.ndarray
    r_PM: np.ndarray
    cov: np.ndarray
    latency: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "r_PM", np.asarray(self.r_PM, dtype=float).reshape(-1, 3))
        object.__setattr__(self, "cov", _check_cov(self.cov) if len(self.t) else np.zeros((0, 3, 3)))
        if not (len(self.t) == len(self.r_PM) == len(self.cov)):
            raise EstimatorError("moving-baseline arrays differ in length")

    def __len__(self):
        return len(self.t)

    def guarded(self, cad_baseline: np.ndarray) -> "MovingBaselines":
        """Drop gross outliers whose norm departs from the CAD baseline by more than 50%."""
        ref = float(np.linalg.norm(cad_baseline))
        ok = np.abs(np.linalg.norm(self.r_PM, axis=1) - ref) <= 0.5 * ref
        lat = None if self.latency is None else self.latency[ok]
        return MovingBaselines(self.t[ok], self.r_PM[ok], self.cov[ok], lat)
