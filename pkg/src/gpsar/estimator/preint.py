"""IMU preintegration on SO(3) and the relative-motion residual between two epochs.

Samples are integrated with the trapezoidal rule on the bias-corrected
specific force rotated into the preintegration frame; rotation uses the
mean rate over each sample interval. Bias changes are applied to first order
through the accumulated bias Jacobians; the caller re-integrates once the
linearization bias moves beyond REINTEGRATE_THRESHOLD.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_triangular

from ..core import (Rot3, batch_exp, batch_log, batch_right_jacobian, batch_right_jacobian_inv,
                    batch_skew)
from .types import EstimatorError, ImuMeasurements, NavState, NoiseConfig

REINTEGRATE_THRESHOLD = 1e-3


@numba.njit(cache=True)
def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


@numba.njit(cache=True)
def _exp_jr(w):
    th = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = _skew(w)
    W2 = W @ W
    if th < 1e-5:
        a, b = 1.0 - th * th / 6.0, 0.5 - th * th / 24.0
        c = 1.0 / 6.0 - th * th / 120.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / (th * th)
        c = (th - math.sin(th)) / (th * th * th)
    R = np.eye(3) + a * W + b * W2
    Jr = np.eye(3) - b * W + c * W2
    return R, Jr


@numba.njit(cache=True)
def _exp_jr_into(wx, wy, wz, R, Jr):
    th2 = wx * wx + wy * wy + wz * wz
    th = math.sqrt(th2)
    if th < 1e-5:
        a, b = 1.0 - th2 / 6.0, 0.5 - th2 / 24.0
        c = 1.0 / 6.0 - th2 / 120.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
        c = (th - math.sin(th)) / (th2 * th)
    W = ((0.0, -wz, wy), (wz, 0.0, -wx), (-wy, wx, 0.0))
    for i in range(3):
        for j in range(3):
            w2 = W[i][0] * W[0][j] + W[i][1] * W[1][j] + W[i][2] * W[2][j]
            e = 1.0 if i == j else 0.0
            R[i, j] = e + a * W[i][j] + b * w2
            Jr[i, j] = e - b * W[i][j] + c * w2


@numba.njit(cache=True)
def _rot_cross(R, c, a, out):
    """out = R @ (a - c x a)."""
    x = a[0] - (c[1] * a[2] - c[2] * a[1])
    y = a[1] - (c[2] * a[0] - c[0] * a[2])
    z = a[2] - (c[0] * a[1] - c[1] * a[0])
    for i in range(3):
        out[i] = R[i, 0] * x + R[i, 1] * y + R[i, 2] * z


@numba.njit(cache=True)
def _integrate(t, acc, gyr, ba, bg, var_a, var_g, want_cov, cumulative):
    """Core recursion; returns cumulative (R, v, p) per sample when ``cumulative``.

    With ``want_cov`` the covariance and bias Jacobians are propagated and the
    Euler-Maclaurin end corrections are applied (they need >= 3 samples).
    """
    n = len(t)
    R = np.eye(3)
    Rn = np.zeros((3, 3))
    dR = np.zeros((3, 3))
    Jr = np.zeros((3, 3))
    v = np.zeros(3)
    p = np.zeros(3)
    cov = np.zeros((9, 9))
    tmp = np.zeros((9, 9))
    JRg = np.zeros((3, 3))
    Jva = np.zeros((3, 3))
    Jvg = np.zeros((3, 3))
    Jpa = np.zeros((3, 3))
    Jpg = np.zeros((3, 3))
    Ra = np.zeros((3, 3))
    RaJ = np.zeros((3, 3))
    m = n if cumulative else 1
    Rs = np.zeros((m, 3, 3))
    vs = np.zeros((m, 3))
    ps = np.zeros((m, 3))
    Rs[0] = R
    A = np.zeros((9, 9))
    f0 = np.zeros(3)
    f1 = np.zeros(3)
    a0 = np.zeros(3)
    a1 = np.zeros(3)
    # the piecewise-linear rate model lags the true attitude by c_m = h^2/12 * dw/dt
    corr = want_cov and n >= 3
    cm = np.zeros((n, 3))
    if corr:
        for k in range(n):
            if k == 0:
                h = t[1] - t[0]
                s = 1.0 / (t[2] - t[0])
                for i in range(3):
                    cm[k, i] = (-3.0 * gyr[0, i] + 4.0 * gyr[1, i] - gyr[2, i]) * s
            elif k == n - 1:
                h = t[k] - t[k - 1]
                s = 1.0 / (t[k] - t[k - 2])
                for i in range(3):
                    cm[k, i] = (3.0 * gyr[k, i] - 4.0 * gyr[k - 1, i] + gyr[k - 2, i]) * s
            else:
                h = 0.5 * (t[k + 1] - t[k - 1])
                s = 1.0 / (t[k + 1] - t[k - 1])
                for i in range(3):
                    cm[k, i] = (gyr[k + 1, i] - gyr[k - 1, i]) * s
            for i in range(3):
                cm[k, i] *= h * h / 12.0
    F = np.zeros((n if corr else 1, 3))
    for k in range(n - 1):
        dt = t[k + 1] - t[k]
        _exp_jr_into(0.5 * (gyr[k, 0] + gyr[k + 1, 0]) * dt - bg[0] * dt,
                     0.5 * (gyr[k, 1] + gyr[k + 1, 1]) * dt - bg[1] * dt,
                     0.5 * (gyr[k, 2] + gyr[k + 1, 2]) * dt - bg[2] * dt, dR, Jr)
        for i in range(3):
            a0[i] = acc[k, i] - ba[i]
            a1[i] = acc[k + 1, i] - ba[i]
        for i in range(3):
            for j in range(3):
                Rn[i, j] = R[i, 0] * dR[0, j] + R[i, 1] * dR[1, j] + R[i, 2] * dR[2, j]
        if corr:
            _rot_cross(R, cm[k], a0, f0)
            _rot_cross(Rn, cm[k + 1], a1, f1)
            F[k] = f0
            F[k + 1] = f1
        else:
            for i in range(3):
                f0[i] = R[i, 0] * a0[0] + R[i, 1] * a0[1] + R[i, 2] * a0[2]
                f1[i] = Rn[i, 0] * a1[0] + Rn[i, 1] * a1[1] + Rn[i, 2] * a1[2]
        if want_cov:
            amx = 0.5 * (a0[0] + a1[0])
            amy = 0.5 * (a0[1] + a1[1])
            amz = 0.5 * (a0[2] + a1[2])
            # R @ skew(am)
            for i in range(3):
                Ra[i, 0] = R[i, 1] * amz - R[i, 2] * amy
                Ra[i, 1] = -R[i, 0] * amz + R[i, 2] * amx
                Ra[i, 2] = R[i, 0] * amy - R[i, 1] * amx
            # covariance in (phi, v, p) order
            A[:, :] = 0.0
            for i in range(3):
                for j in range(3):
                    A[i, j] = dR[j, i]
                    A[3 + i, j] = -Ra[i, j] * dt
                    A[6 + i, j] = -0.5 * Ra[i, j] * dt * dt
                A[3 + i, 3 + i] = 1.0
                A[6 + i, 3 + i] = dt
                A[6 + i, 6 + i] = 1.0
            for i in range(9):
                for j in range(9):
                    acc_ = 0.0
                    for l in range(9):
                        acc_ += A[i, l] * cov[l, j]
                    tmp[i, j] = acc_
            for i in range(9):
                for j in range(9):
                    acc_ = 0.0
                    for l in range(9):
                        acc_ += tmp[i, l] * A[j, l]
                    cov[i, j] = acc_
            qg = var_g * dt
            qa = var_a * dt
            for i in range(3):
                for j in range(3):
                    cov[i, j] += qg * (Jr[i, 0] * Jr[j, 0] + Jr[i, 1] * Jr[j, 1] + Jr[i, 2] * Jr[j, 2])
            # Ba = [0; R dt; R dt^2/2] and R R^T = I
            for i in range(3):
                cov[3 + i, 3 + i] += qa
                cov[3 + i, 6 + i] += qa * 0.5 * dt
                cov[6 + i, 3 + i] += qa * 0.5 * dt
                cov[6 + i, 6 + i] += qa * 0.25 * dt * dt
            for i in range(3):
                for j in range(3):
                    RaJ[i, j] = Ra[i, 0] * JRg[0, j] + Ra[i, 1] * JRg[1, j] + Ra[i, 2] * JRg[2, j]
            for i in range(3):
                for j in range(3):
                    Jpa[i, j] += Jva[i, j] * dt - 0.5 * R[i, j] * dt * dt
                    Jpg[i, j] += Jvg[i, j] * dt - 0.5 * RaJ[i, j] * dt * dt
                    Jva[i, j] -= R[i, j] * dt
                    Jvg[i, j] -= RaJ[i, j] * dt
            for i in range(3):
                for j in range(3):
                    tmp[i, j] = (dR[0, i] * JRg[0, j] + dR[1, i] * JRg[1, j] + dR[2, i] * JRg[2, j]
                                 - Jr[i, j] * dt)
            for i in range(3):
                for j in range(3):
                    JRg[i, j] = tmp[i, j]
        for i in range(3):
            p[i] += v[i] * dt + (dt * dt / 6.0) * (2.0 * f0[i] + f1[i])
            v[i] += 0.5 * (f0[i] + f1[i]) * dt
        R[:, :] = Rn
        if cumulative:
            Rs[k + 1] = R
            vs[k + 1] = v
            ps[k + 1] = p
    if corr:
        T = t[n - 1] - t[0]
        h0 = t[1] - t[0]
        h1 = t[n - 1] - t[n - 2]
        fd0 = (-3.0 * F[0] + 4.0 * F[1] - F[2]) / (t[2] - t[0])
        fd1 = (3.0 * F[n - 1] - 4.0 * F[n - 2] + F[n - 3]) / (t[n - 1] - t[n - 3])
        v = v - (h1 * h1 * fd1 - h0 * h0 * fd0) / 12.0
        p = p - (h1 * h1 * F[n - 1] - h0 * h0 * F[0] - T * h0 * h0 * fd0) / 12.0
        C0, _ = _exp_jr(cm[0])
        C1, _ = _exp_jr(-cm[n - 1])
        R = C0 @ R @ C1
        v = C0 @ v
        p = C0 @ p
    if not cumulative:
        Rs[0] = R
        vs[0] = v
        ps[0] = p
    return Rs, vs, ps, cov, JRg, Jva, Jvg, Jpa, Jpg


def interval_samples(imu: ImuMeasurements, t0: float, t1: float, tol: float = 1e-7):
    """IMU samples covering [t0, t1] with boundary samples interpolated when needed."""
    if t1 <= t0:
        raise EstimatorError("interval end must follow its start")
    t = imu.t
    if len(t) == 0 or t0 < t[0] - tol or t1 > t[-1] + tol:
        raise EstimatorError("IMU stream does not cover the requested interval")
    i0 = int(np.searchsorted(t, t0 - tol, side="left"))
    i1 = int(np.searchsorted(t, t1 + tol, side="right"))
    ts, acc, gyr = t[i0:i1], imu.acc[i0:i1], imu.gyr[i0:i1]
    parts_t, parts_a, parts_g = [ts], [acc], [gyr]
    if len(ts) == 0 or abs(ts[0] - t0) > tol:
        parts_t.insert(0, np.array([t0]))
        parts_a.insert(0, np.array([[np.interp(t0, t, imu.acc[:, j]) for j in range(3)]]))
        parts_g.insert(0, np.array([[np.interp(t0, t, imu.gyr[:, j]) for j in range(3)]]))
    if len(ts) == 0 or abs(ts[-1] - t1) > tol:
        parts_t.append(np.array([t1]))
        parts_a.append(np.array([[np.interp(t1, t, imu.acc[:, j]) for j in range(3)]]))
        parts_g.append(np.array([[np.interp(t1, t, imu.gyr[:, j]) for j in range(3)]]))
    ts = np.concatenate(parts_t)
    ts[0], ts[-1] = t0, t1
    return ts, np.concatenate(parts_a), np.concatenate(parts_g)


@dataclass(frozen=True)
class PreintegratedImu:
    """Relative motion summary between two epochs, linearized at ``bias_lin`` = (b_a, b_g)."""

    dt: float
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    cov: np.ndarray
    J_Rg: np.ndarray
    J_va: np.ndarray
    J_vg: np.ndarray
    J_pa: np.ndarray
    J_pg: np.ndarray
    bias_lin: np.ndarray
    t: np.ndarray
    acc: np.ndarray
    gyr: np.ndarray
    sigma_a: float
    sigma_g: float

    @property
    def delta_R(self) -> Rot3:
        return Rot3.from_matrix(self.dR)

    @property
    def sqrt_info(self) -> np.ndarray:
        L = np.linalg.cholesky(self.cov)
        return solve_triangular(L, np.eye(9), lower=True)

    def reintegrate(self, bias: np.ndarray) -> "PreintegratedImu":
        return _preintegrate_arrays(self.t, self.acc, self.gyr, np.asarray(bias, float),
                                    self.sigma_a, self.sigma_g)

    def needs_reintegration(self, bias: np.ndarray) -> bool:
        return bool(np.max(np.abs(np.asarray(bias) - self.bias_lin)) > REINTEGRATE_THRESHOLD)


def _preintegrate_arrays(t, acc, gyr, bias, sigma_a, sigma_g) -> PreintegratedImu:
    if len(t) < 2:
        raise EstimatorError("preintegration needs at least two samples")
    if np.any(np.diff(t) <= 0):
        raise EstimatorError("IMU timestamps must be strictly increasing")
    Rs, vs, ps, cov, JRg, Jva, Jvg, Jpa, Jpg = _integrate(
        t, acc, gyr, bias[:3].copy(), bias[3:].copy(), sigma_a**2, sigma_g**2, True, False)
    cov = 0.5 * (cov + cov.T)
    return PreintegratedImu(float(t[-1] - t[0]), Rs[0], vs[0], ps[0], cov, JRg, Jva, Jvg, Jpa, Jpg,
                            bias.copy(), t, acc, gyr, sigma_a, sigma_g)


def preintegrate(imu: ImuMeasurements, b_a=None, b_g=None, noise: NoiseConfig | None = None,
                 t0: float | None = None, t1: float | None = None) -> PreintegratedImu:
    """Summarize the IMU samples between ``t0`` and ``t1`` (defaults: stream span)."""
    noise = noise or NoiseConfig()
    if len(imu) < 1:
        raise EstimatorError("at least one IMU measurement is required")
    t0 = imu.t[0] if t0 is None else t0
    t1 = imu.t[-1] if t1 is None else t1
    ts, acc, gyr = interval_samples(imu, t0, t1)
    bias = np.concatenate([np.zeros(3) if b_a is None else np.asarray(b_a, float),
                           np.zeros(3) if b_g is None else np.asarray(b_g, float)])
    return _preintegrate_arrays(ts, acc, gyr, bias, noise.sigma_a, noise.sigma_g)


def integrate_path(t, acc, gyr, bias) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (dR, dv, dp) at every sample, used for high-rate prediction."""
    bias = np.asarray(bias, float)
    Rs, vs, ps, *_ = _integrate(np.asarray(t, float), np.asarray(acc, float), np.asarray(gyr, float),
                                bias[:3].copy(), bias[3:].copy(), 1.0, 1.0, False, True)
    return Rs, vs, ps


# --------------------------------------------------------------------------
# stacked evaluation

@dataclass
class PimStack:
    """Column-stacked preintegration data for vectorized residual evaluation."""

    dt: np.ndarray
    dR: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    J_Rg: np.ndarray
    J_va: np.ndarray
    J_vg: np.ndarray
    J_pa: np.ndarray
    J_pg: np.ndarray
    bias_lin: np.ndarray
    sqrt_info: np.ndarray

    @classmethod
    def from_list(cls, pims) -> "PimStack":
        if not pims:
            z = np.zeros((0, 3, 3))
            return cls(np.zeros(0), z, np.zeros((0, 3)), np.zeros((0, 3)), z, z, z, z, z,
                       np.zeros((0, 6)), np.zeros((0, 9, 9)))
        st = lambda name: np.stack([getattr(p, name) for p in pims])
        return cls(np.array([p.dt for p in pims]), st("dR"), st("dv"), st("dp"), st("J_Rg"),
                   st("J_va"), st("J_vg"), st("J_pa"), st("J_pg"), st("bias_lin"),
                   np.stack([p.sqrt_info for p in pims]))

    def update(self, k: int, pim: PreintegratedImu) -> None:
        for name in ("dR", "dv", "dp", "J_Rg", "J_va", "J_vg", "J_pa", "J_pg", "bias_lin"):
            getattr(self, name)[k] = getattr(pim, name)
        self.dt[k] = pim.dt
        self.sqrt_info[k] = pim.sqrt_info

    def take(self, idx) -> "PimStack":
        return PimStack(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def imu_eval(st: PimStack, Ri, pi, vi, Rj, pj, vj, bias_i, g_vec, jacobians: bool = True):
    """Whitened residuals (K, 9) and Jacobian blocks wrt x_i, x_j (r, v, phi) and bias_i."""
    K = len(st.dt)
    dt = st.dt[:, None]
    db = bias_i - st.bias_lin
    dba, dbg = db[:, :3], db[:, 3:]
    phi_b = np.einsum("kij,kj->ki", st.J_Rg, dbg)
    dR_corr = st.dR @ batch_exp(phi_b)
    dv_corr = st.dv + np.einsum("kij,kj->ki", st.J_va, dba) + np.einsum("kij,kj->ki", st.J_vg, dbg)
    dp_corr = st.dp + np.einsum("kij,kj->ki", st.J_pa, dba) + np.einsum("kij,kj->ki", st.J_pg, dbg)
    RiT = np.swapaxes(Ri, 1, 2)
    E = np.swapaxes(dR_corr, 1, 2) @ RiT @ Rj
    r_phi = batch_log(E)
    wv = vj - vi - g_vec[None, :] * dt
    wp = pj - pi - vi * dt - 0.5 * g_vec[None, :] * dt**2
    bv = np.einsum("kij,kj->ki", RiT, wv)
    bp = np.einsum("kij,kj->ki", RiT, wp)
    res = np.concatenate([r_phi, bv - dv_corr, bp - dp_corr], axis=1)
    L = st.sqrt_info
    res_w = np.einsum("kij,kj->ki", L, res)
    if not jacobians:
        return res_w, None
    Jri = batch_right_jacobian_inv(r_phi)
    Ji = np.zeros((K, 9, 9))
    Jj = np.zeros((K, 9, 9))
    Jb = np.zeros((K, 9, 6))
    Ji[:, 0:3, 6:9] = -Jri @ np.swapaxes(Rj, 1, 2) @ Ri
    Ji[:, 3:6, 3:6] = -RiT
    Ji[:, 3:6, 6:9] = batch_skew(bv)
    Ji[:, 6:9, 0:3] = -RiT
    Ji[:, 6:9, 3:6] = -RiT * dt[:, :, None]
    Ji[:, 6:9, 6:9] = batch_skew(bp)
    Jj[:, 0:3, 6:9] = Jri
    Jj[:, 3:6, 3:6] = RiT
    Jj[:, 6:9, 0:3] = RiT
    Jb[:, 0:3, 3:6] = -Jri @ np.swapaxes(batch_exp(r_phi), 1, 2) @ batch_right_jacobian(phi_b) @ st.J_Rg
    Jb[:, 3:6, 0:3] = -st.J_va
    Jb[:, 3:6, 3:6] = -st.J_vg
    Jb[:, 6:9, 0:3] = -st.J_pa
    Jb[:, 6:9, 3:6] = -st.J_pg
    return res_w, (L @ Ji, L @ Jj, L @ Jb)


def imu_residual(x_i: NavState, x_j: NavState, c_i, pim: PreintegratedImu, g_vec,
                 tol: float = 1e-6):
    """Whitened 9-vector (rotation, velocity, position) and Jacobians wrt x_i, x_j, bias_i.

    Jacobian columns follow the tangent order (r, v, phi) for states and
    (b_a, b_g) for the bias.
    """
    if abs((x_j.t - x_i.t) - pim.dt) > tol:
        raise EstimatorError("state time difference does not match the preintegration span")
    st = PimStack.from_list([pim])
    bias = np.concatenate([c_i.b_a, c_i.b_g])[None, :]
    res, (Ji, Jj, Jb) = imu_eval(st, x_i.R_IB.matrix[None], x_i.r_IB[None], x_i.v_B[None],
                                 x_j.R_IB.matrix[None], x_j.r_IB[None], x_j.v_B[None], bias,
                                 np.asarray(g_vec, float))
    return res[0], {"x_i": Ji[0], "x_j": Jj[0], "bias_i": Jb[0]}


def propagate(R, p, v, pim: PreintegratedImu, bias, g_vec):
    """Predict the end state of a preintegration interval from its start state."""
    db = np.asarray(bias) - pim.bias_lin
    dR = pim.dR @ batch_exp((pim.J_Rg @ db[3:])[None])[0]
    dv = pim.dv + pim.J_va @ db[:3] + pim.J_vg @ db[3:]
    dp = pim.dp + pim.J_pa @ db[:3] + pim.J_pg @ db[3:]
    T = pim.dt
    return R @ dR, p + v * T + 0.5 * g_vec * T * T + R @ dp, v + g_vec * T + R @ dv

