"""Piecewise-polynomial GPSAR measurement trajectories.

Measurement primitives (circles, straight stripmap lines) are turned into
fully constrained support vertices flown at constant speed. Acceleration,
deceleration and rest-to-rest transfer segments get the shortest duration
that still passes the dynamic feasibility test.

Position polynomials are degree 9 per axis and yaw polynomials degree 5.
Coefficients are stored in normalized segment time ``s = t / T``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .core import wrap_angle

GRAVITY = 9.81
POS_DEGREE = 9
YAW_DEGREE = 5
CONTINUITY_ORDER = 4  # snap-continuous
FEASIBILITY_STEP = 1e-3
SEARCH_TOL = 1e-3
MIN_SEGMENT_TIME = 0.1
MAX_SEGMENT_TIME = 60.0

MEASUREMENT = "measurement"
ACCELERATE = "accelerate"
DECELERATE = "decelerate"
TRANSFER = "transfer"


class TrajectoryError(ValueError):
    pass


class InfeasibleError(TrajectoryError):
    pass


@dataclass
class VertexConstraint:
    """Time-free support vertex. ``None`` derivatives are left free."""

    position: np.ndarray
    velocity: np.ndarray | None = None
    acceleration: np.ndarray | None = None
    jerk: np.ndarray | None = None
    snap: np.ndarray | None = None
    yaw: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        for name in ("velocity", "acceleration", "jerk", "snap"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.asarray(val, dtype=float))

    def fixed(self) -> dict[int, np.ndarray]:
        out = {0: self.position}
        for order, val in enumerate((self.velocity, self.acceleration, self.jerk, self.snap), start=1):
            if val is not None:
                out[order] = val
        return out

    @classmethod
    def rest(cls, position, yaw: float = 0.0) -> "VertexConstraint":
        z = np.zeros(3)
        return cls(position, z, z, z, z, yaw, 0.0)

    @classmethod
    def moving(cls, position, velocity, yaw_rate: float = 0.0) -> "VertexConstraint":
        velocity = np.asarray(velocity, dtype=float)
        z = np.zeros(3)
        return cls(position, velocity, z, z, z,
                   math.atan2(velocity[1], velocity[0]), yaw_rate)


@dataclass
class DynamicLimits:
    f_min: float = GRAVITY - 1.0
    f_max: float = GRAVITY + 1.0
    v_max: float = 5.0
    roll_pitch_rate_max: float = math.pi / 12
    yaw_acc_max: float = math.pi / 2

    def __post_init__(self):
        if not self.f_min < GRAVITY < self.f_max:
            raise TrajectoryError("thrust limits must bracket gravity")


@dataclass
class CirclePlan:
    center: np.ndarray
    radius: float
    start_angle: float
    angle: float
    speed: float
    deviation: float = 0.05
    altitude: float = 2.0
    clockwise: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)[:2]
        if self.radius <= 0 or self.angle <= 0 or self.speed <= 0:
            raise TrajectoryError("circle radius, angle and speed must be positive")
        if not 0.0 < self.deviation < 1.0:
            raise TrajectoryError("deviation must lie in (0, 1)")


@dataclass
class FlatState:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray
    yaw: float
    yaw_rate: float


def _deriv_row(degree: int, order: int, s: float, T: float) -> np.ndarray:
    """Row mapping normalized coefficients to the ``order``-th time derivative."""
    row = np.zeros(degree + 1)
    for k in range(order, degree + 1):
        row[k] = math.perm(k, order) * s ** (k - order)
    return row / T**order


def _poly_eval(coeffs: np.ndarray, order: int, s: np.ndarray, T: float) -> np.ndarray:
    """Evaluate derivative ``order`` of normalized polynomial(s) at ``s``.

    ``coeffs`` has shape (..., degree+1); result has shape (..., len(s)).
    """
    degree = coeffs.shape[-1] - 1
    s = np.atleast_1d(s)
    out = np.zeros(coeffs.shape[:-1] + s.shape)
    for k in range(order, degree + 1):
        out += coeffs[..., k:k + 1] * (math.perm(k, order) * s ** (k - order))
    return out / T**order


@dataclass
class PolySegment:
    duration: float
    coeffs: np.ndarray          # (3, POS_DEGREE + 1)
    yaw_coeffs: np.ndarray      # (YAW_DEGREE + 1,)

    def __post_init__(self):
        if self.duration <= 0:
            raise TrajectoryError("segment duration must be positive")
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.yaw_coeffs = np.asarray(self.yaw_coeffs, dtype=float)

    def derivative(self, order: int, t) -> np.ndarray:
        """Position derivative at local times ``t``; shape (3, N)."""
        return _poly_eval(self.coeffs, order, np.asarray(t) / self.duration, self.duration)

    def yaw_derivative(self, order: int, t) -> np.ndarray:
        return _poly_eval(self.yaw_coeffs, order, np.asarray(t) / self.duration, self.duration)

    def to_dict(self) -> dict:
        return {"duration": self.duration, "coeffs": self.coeffs.tolist(),
                "yaw_coeffs": self.yaw_coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolySegment":
        return cls(float(d["duration"]), np.array(d["coeffs"]), np.array(d["yaw_coeffs"]))


@dataclass
class Trajectory:
    segments: list[PolySegment] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    t0: float = 0.0

    def __post_init__(self):
        if len(self.segments) != len(self.kinds):
            raise TrajectoryError("one kind tag per segment required")

    @property
    def boundaries(self) -> np.ndarray:
        return self.t0 + np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def extend(self, other: "Trajectory") -> None:
        self.segments.extend(other.segments)
        self.kinds.extend(other.kinds)

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = self.boundaries
        idx = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(self.segments) - 1)
        return idx, t - b[idx]

    def sample_many(self, t) -> dict[str, np.ndarray]:
        """Vectorized sampling; returns arrays keyed like :class:`FlatState`."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.segments:
            raise TrajectoryError("empty trajectory")
        if t.min() < self.t0 - 1e-9 or t.max() > self.t_end + 1e-9:
            raise TrajectoryError("sample time outside trajectory span")
        idx, tau = self._locate(t)
        out = {k: np.zeros((len(t), 3)) for k in ("position", "velocity", "acceleration", "jerk", "snap")}
        out["yaw"] = np.zeros(len(t))
        out["yaw_rate"] = np.zeros(len(t))
        out["yaw_acc"] = np.zeros(len(t))
        for i in np.unique(idx):
            m = idx == i
            seg = self.segments[i]
            for order, name in enumerate(("position", "velocity", "acceleration", "jerk", "snap")):
                out[name][m] = seg.derivative(order, tau[m]).T
            out["yaw"][m] = seg.yaw_derivative(0, tau[m])
            out["yaw_rate"][m] = seg.yaw_derivative(1, tau[m])
            out["yaw_acc"][m] = seg.yaw_derivative(2, tau[m])
        return out

    def to_dict(self) -> dict:
        return {"t0": self.t0, "kinds": list(self.kinds),
                "segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls([PolySegment.from_dict(s) for s in d["segments"]], list(d["kinds"]), float(d["t0"]))


def sample(traj: Trajectory, t: float) -> FlatState:
    out = traj.sample_many([t])
    return FlatState(out["position"][0], out["velocity"][0], out["acceleration"][0],
                     out["jerk"][0], float(out["yaw"][0]), float(out["yaw_rate"][0]))


# --------------------------------------------------------------------------
# vertex planning

def circle_vertex_count(theta: float, d: float) -> int:
    if not 0.0 < d < 1.0:
        raise TrajectoryError("deviation parameter d must lie in (0, 1)")
    if theta <= 0.0:
        raise TrajectoryError("subtended angle must be positive")
    step = math.acos(2.0 * (1.0 - d) ** 2 - 1.0)
    return max(1, math.ceil(theta / step - 1e-12))


def plan_circle(plan: CirclePlan) -> tuple[list[VertexConstraint], list[float]]:
    """Support vertices on the circle plus constant-speed segment times."""
    M = circle_vertex_count(plan.angle, plan.deviation)
    sign = -1.0 if plan.clockwise else 1.0
    step = plan.angle / M
    verts = []
    for k in range(M + 1):
        phi = plan.start_angle + sign * k * step
        pos = np.array([plan.center[0] + plan.radius * math.cos(phi),
                        plan.center[1] + plan.radius * math.sin(phi), plan.altitude])
        vel = sign * plan.speed * np.array([-math.sin(phi), math.cos(phi), 0.0])
        verts.append(VertexConstraint.moving(pos, vel, yaw_rate=sign * plan.speed / plan.radius))
    times = [plan.radius * step / plan.speed] * M
    return verts, times


def plan_stripmap(start, end, v: float) -> tuple[list[VertexConstraint], list[float]]:
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    length = np.linalg.norm(end - start)
    if length < 1e-6:
        raise TrajectoryError("degenerate stripmap segment")
    if v <= 0:
        raise TrajectoryError("speed must be positive")
    vel = v * (end - start) / length
    return [VertexConstraint.moving(start, vel), VertexConstraint.moving(end, vel)], [length / v]


# --------------------------------------------------------------------------
# polynomial solve

def _snap_cost_hessian(T: float, degree: int = POS_DEGREE) -> np.ndarray:
    r = 4
    H = np.zeros((degree + 1, degree + 1))
    for k in range(r, degree + 1):
        for m in range(r, degree + 1):
            H[k, m] = math.perm(k, r) * math.perm(m, r) / (k + m - 2 * r + 1)
    return H / T ** (2 * r - 1)


def _solve_axis(fixed: list[dict[int, float]], times: Sequence[float], degree: int,
                continuity: int, hessian: Callable[[float], np.ndarray] | None) -> np.ndarray:
    n_seg = len(times)
    nc = degree + 1
    rows, rhs = [], []

    def add(seg: int, order: int, s: float, value: float, sign: float = 1.0, other=None):
        row = np.zeros(n_seg * nc)
        row[seg * nc:(seg + 1) * nc] = sign * _deriv_row(degree, order, s, times[seg])
        if other is not None:
            oseg, os = other
            row[oseg * nc:(oseg + 1) * nc] -= _deriv_row(degree, order, os, times[oseg])
        rows.append(row)
        rhs.append(value)

    for v, cons in enumerate(fixed):
        for order in range(continuity + 1):
            val = cons.get(order)
            if v == 0:
                if val is not None:
                    add(0, order, 0.0, val)
            elif v == n_seg:
                if val is not None:
                    add(n_seg - 1, order, 1.0, val)
            else:
                if val is not None:
                    add(v - 1, order, 1.0, val)
                    add(v, order, 0.0, val)
                else:
                    add(v - 1, order, 1.0, 0.0, other=(v, 0.0))
    A = np.array(rows)
    b = np.array(rhs)
    nvar = n_seg * nc
    if np.linalg.matrix_rank(A) < len(rows):
        raise TrajectoryError("constraint matrix is rank deficient")
    if len(rows) == nvar:
        return np.linalg.solve(A, b).reshape(n_seg, nc)
    H = np.zeros((nvar, nvar))
    for i, T in enumerate(times):
        H[i * nc:(i + 1) * nc, i * nc:(i + 1) * nc] = hessian(T) if hessian else np.eye(nc)
    K = np.block([[H, A.T], [A, np.zeros((len(rows), len(rows)))]])
    if np.linalg.matrix_rank(K) < K.shape[0]:
        raise TrajectoryError("polynomial system is singular")
    sol = np.linalg.solve(K, np.concatenate([np.zeros(nvar), b]))
    return sol[:nvar].reshape(n_seg, nc)


def solve_polynomial(vertices: Sequence[VertexConstraint], segment_times: Sequence[float],
                     kinds: Sequence[str] | None = None) -> Trajectory:
    """Degree-9 minimum-snap fit through the vertex constraints."""
    if len(vertices) != len(segment_times) + 1:
        raise TrajectoryError("need one more vertex than segment times")
    if any(T <= 0 for T in segment_times):
        raise TrajectoryError("segment times must be positive")
    axes = []
    for ax in range(3):
        fixed = [{o: val[ax] for o, val in v.fixed().items()} for v in vertices]
        axes.append(_solve_axis(fixed, segment_times, POS_DEGREE, CONTINUITY_ORDER, _snap_cost_hessian))
    yaws = np.unwrap([v.yaw for v in vertices])
    yaw_fixed = [{0: yaws[i], 1: v.yaw_rate, 2: 0.0} for i, v in enumerate(vertices)]
    yaw_c = _solve_axis(yaw_fixed, segment_times, YAW_DEGREE, 2, None)
    segments = [PolySegment(T, np.stack([axes[a][i] for a in range(3)]), yaw_c[i])
                for i, T in enumerate(segment_times)]
    kinds = list(kinds) if kinds is not None else [MEASUREMENT] * len(segments)
    return Trajectory(segments, kinds)


# --------------------------------------------------------------------------
# feasibility and minimum-time search

@dataclass
class FeasibilityReport:
    feasible: bool
    thrust_min: float
    thrust_max: float
    speed_max: float
    rate_max: float
    yaw_acc_max: float
    violations: list[str] = field(default_factory=list)


def feasibility_check(segment: PolySegment, limits: DynamicLimits,
                      step: float = FEASIBILITY_STEP) -> FeasibilityReport:
    t = np.append(np.arange(0.0, segment.duration, step), segment.duration)
    vel = segment.derivative(1, t)
    acc = segment.derivative(2, t)
    jerk = segment.derivative(3, t)
    thrust_vec = acc + np.array([[0.0], [0.0], [GRAVITY]])
    thrust = np.linalg.norm(thrust_vec, axis=0)
    speed = np.linalg.norm(vel, axis=0)
    # roll/pitch rate proxy of the flat multirotor model
    rate = np.linalg.norm(jerk, axis=0) / np.maximum(thrust, 1e-9)
    yaw_acc = np.abs(segment.yaw_derivative(2, t))
    rep = FeasibilityReport(True, float(thrust.min()), float(thrust.max()), float(speed.max()),
                            float(rate.max()), float(yaw_acc.max()))
    tol = 1e-9
    if rep.thrust_min < limits.f_min - tol:
        rep.violations.append(f"thrust {rep.thrust_min:.4f} < f_min {limits.f_min}")
    if rep.thrust_max > limits.f_max + tol:
        rep.violations.append(f"thrust {rep.thrust_max:.4f} > f_max {limits.f_max}")
    if rep.speed_max > limits.v_max + tol:
        rep.violations.append(f"speed {rep.speed_max:.4f} > v_max {limits.v_max}")
    if rep.rate_max > limits.roll_pitch_rate_max + tol:
        rep.violations.append(f"rotation rate {rep.rate_max:.4f} > {limits.roll_pitch_rate_max}")
    if rep.yaw_acc_max > limits.yaw_acc_max + tol:
        rep.violations.append(f"yaw acceleration {rep.yaw_acc_max:.4f} > {limits.yaw_acc_max}")
    rep.feasible = not rep.violations
    return rep


def _min_time(build: Callable[[float], PolySegment], limits: DynamicLimits,
              t_min: float = MIN_SEGMENT_TIME, t_cap: float = MAX_SEGMENT_TIME,
              tol: float = SEARCH_TOL) -> PolySegment:
    def ok(T):
        return feasibility_check(build(T), limits).feasible

    if ok(t_min):
        return build(t_min)
    lo, hi = t_min, 2.0 * t_min
    while not ok(hi):
        lo, hi = hi, 2.0 * hi
        if hi > t_cap:
            raise InfeasibleError(f"no feasible segment time below {t_cap} s")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return build(hi)


def _single(a: VertexConstraint, b: VertexConstraint, T: float) -> PolySegment:
    return solve_polynomial([a, b], [T]).segments[0]


def min_time_connection(start: VertexConstraint, goal: VertexConstraint, limits: DynamicLimits,
                        t_min: float = MIN_SEGMENT_TIME, t_cap: float = MAX_SEGMENT_TIME) -> PolySegment:
    """Shortest feasible single segment between two fixed vertices."""
    return _min_time(lambda T: _single(start, goal, T), limits, t_min, t_cap)


def acceleration_segment(entry: VertexConstraint, limits: DynamicLimits) -> PolySegment:
    """Rest-to-speed segment ending at ``entry``.

    The rest vertex sits behind the entry along the entry velocity, at the
    distance a constant acceleration would cover in the segment time.
    """
    v = entry.velocity

    def build(T):
        rest = VertexConstraint.rest(entry.position - 0.5 * T * v, entry.yaw)
        return _single(rest, entry, T)

    return _min_time(build, limits)


def deceleration_segment(exit_vertex: VertexConstraint, limits: DynamicLimits) -> PolySegment:
    v = exit_vertex.velocity

    def build(T):
        rest = VertexConstraint.rest(exit_vertex.position + 0.5 * T * v, exit_vertex.yaw)
        return _single(exit_vertex, rest, T)

    return _min_time(build, limits)


def mission_mask(traj: Trajectory) -> list[tuple[float, float]]:
    windows = []
    b = traj.boundaries
    start = None
    for i, kind in enumerate(traj.kinds):
        if kind == MEASUREMENT and start is None:
            start = b[i]
        if kind != MEASUREMENT and start is not None:
            windows.append((float(start), float(b[i])))
            start = None
    if start is not None:
        windows.append((float(start), float(b[len(traj.kinds)])))
    return windows


# --------------------------------------------------------------------------
# mission planning

def load_mission_schema() -> dict:
    return json.loads(resources.files("gpsar").joinpath("schemas/mission.schema.json").read_text())


def validate_mission(mission: dict) -> None:
    import jsonschema

    validator = jsonschema.Draft7Validator(load_mission_schema())
    errors = sorted(validator.iter_errors(mission), key=lambda e: list(e.path))
    if errors:
        msg = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise TrajectoryError(f"mission schema error: {msg}")


def _end_state(seg: PolySegment, yaw_unwrapped: float | None = None) -> VertexConstraint:
    p = seg.derivative(0, [seg.duration])[:, 0]
    yaw = float(seg.yaw_derivative(0, [seg.duration])[0])
    return VertexConstraint.rest(p, yaw if yaw_unwrapped is None else yaw_unwrapped)


def _primitive_vertices(prim: dict, speed: float, deviation: float):
    kind = prim["type"]
    v = float(prim.get("speed", speed))
    if kind == "circle":
        plan = CirclePlan(np.array(prim["center"][:2]), float(prim["radius"]),
                          float(prim.get("start_angle", 0.0)), float(prim.get("angle", 2 * math.pi)),
                          v, float(prim.get("deviation", deviation)), float(prim["altitude"]),
                          bool(prim.get("clockwise", False)))
        return plan_circle(plan)
    if kind == "stripmap":
        return plan_stripmap(prim["start"], prim["end"], v)
    raise TrajectoryError(f"unknown primitive type {kind!r}")


def plan_mission(mission: dict) -> Trajectory:
    """Chain primitives with accelerate/decelerate and rest-to-rest transfers."""
    validate_mission(mission)
    limits = DynamicLimits(**mission.get("limits", {}))
    speed = float(mission.get("speed", 1.0))
    deviation = float(mission.get("deviation", 0.05))
    traj = Trajectory(t0=float(mission.get("t0", 0.0)))
    last_rest: VertexConstraint | None = None
    for prim in mission["primitives"]:
        verts, times = _primitive_vertices(prim, speed, deviation)
        meas = solve_polynomial(verts, times)
        acc = acceleration_segment(verts[0], limits)
        dec = deceleration_segment(verts[-1], limits)
        if last_rest is not None:
            start = VertexConstraint.rest(acc.derivative(0, [0.0])[:, 0],
                                          float(acc.yaw_derivative(0, [0.0])[0]))
            # keep the heading change of the transfer below half a turn
            goal_yaw = last_rest.yaw + wrap_angle(start.yaw - last_rest.yaw)
            goal = VertexConstraint.rest(start.position, goal_yaw)
            transfer = min_time_connection(last_rest, goal, limits)
            shift = goal_yaw - start.yaw
            traj.segments.append(transfer)
            traj.kinds.append(TRANSFER)
        else:
            shift = 0.0
        # yaw continuity: offset the primitive's yaw polynomials by whole turns
        for seg in [acc] + meas.segments + [dec]:
            seg.yaw_coeffs = seg.yaw_coeffs.copy()
            seg.yaw_coeffs[0] += shift
        traj.segments.append(acc)
        traj.kinds.append(ACCELERATE)
        traj.extend(meas)
        traj.segments.append(dec)
        traj.kinds.append(DECELERATE)
        last_rest = _end_state(dec)
    if not traj.segments:
        raise TrajectoryError("mission has no primitives")
    for i, seg in enumerate(traj.segments):
        rep = feasibility_check(seg, limits)
        if not rep.feasible:
            raise InfeasibleError(f"segment {i} ({traj.kinds[i]}) infeasible: {'; '.join(rep.violations)}")
    return traj
