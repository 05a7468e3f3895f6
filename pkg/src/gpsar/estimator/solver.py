"""Fixed-lag (online) and batch MAP solvers over a FactorGraph.

Variables are ordered node by node, each node holding (r, v, phi, b_a, b_g),
followed by the shared lever arms (r_BP, r_BM). The normal equations are
block-banded with a dense lever-arm border, which the linear solver exploits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solveh_banded
from scipy.sparse import coo_matrix

from ..core import Rot3, batch_exp, batch_log, batch_right_jacobian_inv
from .factors import baseline_eval, position_eval
from .graph import BIAS_DIM, LEVER_DIM, NODE_DIM, STATE_DIM, FactorGraph
from .preint import PimStack, imu_eval, propagate
from .types import Calibration, EstimatorError, NavState

GN_GRAD_TOL = 1e-8
GN_STEP_TOL = 1e-10
GN_MAX_ITERS = 25
LM_REL_TOL = 1e-10
LM_MAX_ITERS = 100
LM_STEP_TOL = 1e-8
WEAK_PRIOR = 1e-9
BANDWIDTH = 2 * NODE_DIM - 1


@dataclass
class Estimate:
    """Values of every graph variable."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    bias: np.ndarray
    lever: np.ndarray

    def copy(self) -> "Estimate":
        return Estimate(self.t.copy(), self.p.copy(), self.v.copy(), self.R.copy(), self.bias.copy(),
                        self.lever.copy())

    def __len__(self):
        return len(self.t)

    def state(self, i: int) -> NavState:
        return NavState(self.t[i], self.p[i], self.v[i], Rot3.from_matrix(self.R[i]))

    def calibration(self, i: int = -1) -> Calibration:
        return Calibration(self.bias[i, :3], self.bias[i, 3:], self.lever[:3], self.lever[3:])

    def retract(self, a: int, b: int, delta: np.ndarray) -> "Estimate":
        out = self.copy()
        n = b - a + 1
        d = delta[: n * NODE_DIM].reshape(n, NODE_DIM)
        out.p[a:b + 1] += d[:, 0:3]
        out.v[a:b + 1] += d[:, 3:6]
        out.R[a:b + 1] = self.R[a:b + 1] @ batch_exp(d[:, 6:9])
        out.bias[a:b + 1] += d[:, 9:15]
        out.lever = self.lever + delta[n * NODE_DIM:]
        return out


@dataclass
class MarginalPrior:
    """Dense Gaussian on (node, lever) left behind by Schur-complement marginalization."""

    node: int
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    bias: np.ndarray
    lever: np.ndarray
    J0: np.ndarray
    r0: np.ndarray

    def delta(self, est: Estimate) -> tuple[np.ndarray, np.ndarray]:
        i = self.node
        phi = batch_log((self.R.T @ est.R[i])[None])[0]
        d = np.concatenate([est.p[i] - self.p, est.v[i] - self.v, phi, est.bias[i] - self.bias,
                            est.lever - self.lever])
        return d, phi


@dataclass
class SolveReport:
    iterations: list[int] = field(default_factory=list)
    cost: float = math.nan
    initial_cost: float = math.nan
    diagnostics: list[str] = field(default_factory=list)
    reintegrations: int = 0


@dataclass
class NormalEquations:
    """H and g of a bordered block-banded system: ``ab`` holds the upper band of
    the node block, ``B`` the node/lever coupling and ``C`` the lever block."""

    ab: np.ndarray
    B: np.ndarray
    C: np.ndarray
    g: np.ndarray

    @property
    def n_band(self) -> int:
        return self.ab.shape[1]

    def dense(self) -> np.ndarray:
        nb, bw = self.n_band, self.ab.shape[0] - 1
        n = nb + len(self.C)
        H = np.zeros((n, n))
        for k in range(bw + 1):
            d = self.ab[bw - k, k:]
            H[np.arange(nb - k), np.arange(k, nb)] = d
            H[np.arange(k, nb), np.arange(nb - k)] = d
        H[:nb, nb:] = self.B
        H[nb:, :nb] = self.B.T
        H[nb:, nb:] = self.C
        return H


class _Groups:
    """Jacobian rows collected per factor type as stacked dense blocks."""

    def __init__(self):
        self.items = []

    def add(self, row0: np.ndarray, parts) -> None:
        """``parts`` is a list of (first column (K,), block (K, m, w))."""
        if len(row0) == 0:
            return
        cols = np.concatenate([c[:, None] + np.arange(J.shape[2])[None, :] for c, J in parts], axis=1)
        J = np.concatenate([J for _, J in parts], axis=2)
        self.items.append((np.asarray(row0), cols, J))

    def matrix(self, m: int, n: int):
        if not self.items:
            return coo_matrix((m, n)).tocsr()
        rows, cols, vals = [], [], []
        for row0, c, J in self.items:
            K, mm, W = J.shape
            rows.append(np.broadcast_to((row0[:, None] + np.arange(mm))[:, :, None], J.shape).ravel())
            cols.append(np.broadcast_to(c[:, None, :], J.shape).ravel())
            vals.append(J.ravel())
        return coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(m, n)).tocsr()

    def normal(self, r: np.ndarray, n_band: int, n: int) -> NormalEquations:
        nl = n - n_band
        ab = np.zeros((BANDWIDTH + 1, n_band))
        B = np.zeros((n_band, nl))
        C = np.zeros((nl, nl))
        g = np.zeros(n)
        for row0, c, J in self.items:
            rf = r[row0[:, None] + np.arange(J.shape[1])]
            if not _accumulate(c, np.ascontiguousarray(J), np.ascontiguousarray(rf), n_band, ab, B, C, g):
                raise EstimatorError("normal matrix exceeds the expected band structure")
        return NormalEquations(ab, B, C, g)


@numba.njit(cache=True)
def _accumulate(cols, J, rf, n_band, ab, B, C, g):
    """Add J^T J and J^T r of stacked factor blocks into bordered banded storage."""
    bw = ab.shape[0] - 1
    K, m, W = J.shape
    for k in range(K):
        for i in range(W):
            ci = cols[k, i]
            s = 0.0
            for l in range(m):
                s += J[k, l, i] * rf[k, l]
            g[ci] += s
            for j in range(W):
                cj = cols[k, j]
                if cj < ci:
                    continue
                h = 0.0
                for l in range(m):
                    h += J[k, l, i] * J[k, l, j]
                if cj < n_band:
                    if cj - ci > bw:
                        return False
                    ab[bw + ci - cj, cj] += h
                elif ci < n_band:
                    B[ci, cj - n_band] += h
                else:
                    C[ci - n_band, cj - n_band] += h
                    if ci != cj:
                        C[cj - n_band, ci - n_band] += h
    return True


class Linearizer:
    """Evaluates whitened residuals and Jacobians of the graph on a node range."""

    def __init__(self, graph: FactorGraph, pims=None):
        self.graph = graph
        self.pims = list(graph.pims if pims is None else pims)
        self.stack = PimStack.from_list(self.pims)
        self.rw_L = graph.rw_sqrt_info()
        self.g_vec = graph.noise.g_vec
        self.reintegrations = 0

    def refresh_biases(self, est: Estimate, a: int, b: int) -> int:
        """Re-integrate IMU factors in [a, b) whose bias moved beyond the threshold."""
        count = 0
        for i in range(a, min(b, len(self.pims))):
            if self.pims[i].needs_reintegration(est.bias[i]):
                self.pims[i] = self.pims[i].reintegrate(est.bias[i])
                self.stack.update(i, self.pims[i])
                count += 1
        self.reintegrations += count
        return count

    def linearize(self, est: Estimate, a: int, b: int, marg: MarginalPrior | None = None,
                  jacobians: bool = True, only_node: int | None = None, normal: bool = False):
        """Residual vector and (optionally) the sparse Jacobian over nodes a..b plus lever.

        With ``normal`` the second value is the NormalEquations of the range instead.
        """
        g = self.graph
        n_nodes = b - a + 1
        n_cols = n_nodes * NODE_DIM + LEVER_DIM
        lever_col = n_nodes * NODE_DIM
        res_parts = []
        blk = _Groups() if jacobians else None
        row = 0

        def col(i):
            return (np.asarray(i) - a) * NODE_DIM

        # prior f0
        if a == 0 and (only_node is None or only_node == 0):
            pr = g.prior
            phi = batch_log((pr.x0.R_IB.matrix.T @ est.R[0])[None])[0]
            sx = 1.0 / pr.sigma_x
            rx = sx * np.concatenate([est.p[0] - pr.x0.r_IB, est.v[0] - pr.x0.v_B, phi])
            rb = (est.bias[0] - pr.bias0) / pr.sigma_bias
            rl = (est.lever - pr.lever0) / pr.sigma_lever
            res_parts += [rx, rb, rl]
            if jacobians:
                Jx = np.diag(sx)
                Jx[6:9, 6:9] = sx[6:9, None] * batch_right_jacobian_inv(phi[None])[0]
                blk.add(np.array([row]), [(np.array([col(0)]), Jx[None])])
                blk.add(np.array([row + 9]), [(np.array([col(0) + STATE_DIM]),
                                               np.diag(1.0 / pr.sigma_bias)[None])])
                blk.add(np.array([row + 15]), [(np.array([lever_col]), np.diag(1.0 / pr.sigma_lever)[None])])
            row += 21

        # marginal prior on the window head
        if marg is not None and marg.node == a and (only_node is None or only_node == a):
            d, phi = marg.delta(est)
            res_parts.append(marg.r0 + marg.J0 @ d)
            if jacobians:
                Jd = marg.J0.copy()
                Jd[:, 6:9] = marg.J0[:, 6:9] @ batch_right_jacobian_inv(phi[None])[0]
                blk.add(np.array([row]), [(np.array([col(a)]), Jd[None, :, :NODE_DIM]),
                                          (np.array([lever_col]), Jd[None, :, NODE_DIM:])])
            row += len(marg.r0)

        # IMU and bias random walk
        hi = b if only_node is None else min(b, only_node + 1)
        lo = a if only_node is None else only_node
        ii = np.arange(lo, hi)
        if len(ii):
            st = self.stack.take(ii)
            jj = ii + 1
            r_imu, Js = imu_eval(st, est.R[ii], est.p[ii], est.v[ii], est.R[jj], est.p[jj], est.v[jj],
                                 est.bias[ii], self.g_vec, jacobians)
            res_parts.append(r_imu.ravel())
            rows = row + 9 * np.arange(len(ii))
            if jacobians:
                Ji, Jj, Jb = Js
                blk.add(rows, [(col(ii), np.concatenate([Ji, Jb], axis=2)), (col(jj), Jj)])
            row += 9 * len(ii)
            Lrw = self.rw_L[ii]
            res_parts.append((Lrw * (est.bias[jj] - est.bias[ii])).ravel())
            if jacobians:
                rows = row + 6 * np.arange(len(ii))
                D = np.zeros((len(ii), 6, 6))
                D[:, np.arange(6), np.arange(6)] = Lrw
                blk.add(rows, [(col(ii) + STATE_DIM, -D), (col(jj) + STATE_DIM, D)])
            row += 6 * len(ii)

        # GNSS unary factors
        for kind in ("pos", "mb"):
            idx_all = g.pos_idx if kind == "pos" else g.mb_idx
            if only_node is None:
                sel = np.nonzero((idx_all >= a) & (idx_all <= b))[0]
            else:
                sel = np.nonzero(idx_all == only_node)[0]
            if len(sel) == 0:
                continue
            nodes = idx_all[sel]
            if kind == "pos":
                r_f, Js = position_eval(est.R[nodes], est.p[nodes], est.lever[:3], g.pos_z[sel],
                                        g.pos_L[sel], jacobians)
            else:
                r_f, Js = baseline_eval(est.R[nodes], est.lever[:3], est.lever[3:], g.mb_z[sel],
                                        g.mb_L[sel], jacobians)
            res_parts.append(r_f.ravel())
            if jacobians:
                rows = row + 3 * np.arange(len(sel))
                Jx, Jl = Js
                blk.add(rows, [(col(nodes), Jx), (np.full(len(sel), lever_col), Jl)])
            row += 3 * len(sel)

        r = np.concatenate(res_parts) if res_parts else np.zeros(0)
        if not jacobians:
            return r, None
        if normal:
            return r, blk.normal(r, n_nodes * NODE_DIM, n_cols)
        return r, blk.matrix(row, n_cols)

    def cost(self, est: Estimate, a: int = 0, b: int | None = None, marg=None) -> float:
        b = len(est) - 1 if b is None else b
        r, _ = self.linearize(est, a, b, marg, jacobians=False)
        return float(r @ r)


def _split_bordered(H, n_band: int, bw: int):
    """Upper banded storage of the node block plus the dense border blocks."""
    if hasattr(H, "tocoo"):
        Hc = H.tocoo()
        i, j, v = Hc.row, Hc.col, Hc.data
    else:
        i, j = np.nonzero(H)
        v = H[i, j]
    nl = H.shape[0] - n_band
    ab = np.zeros((bw + 1, n_band))
    B = np.zeros((n_band, nl))
    C = np.zeros((nl, nl))
    band = (i < n_band) & (j < n_band)
    if np.any(band & (np.abs(j - i) > bw)):
        raise EstimatorError("normal matrix exceeds the expected band structure")
    up = band & (j >= i)
    ab[bw + i[up] - j[up], j[up]] = v[up]
    m = (i < n_band) & (j >= n_band)
    B[i[m], j[m] - n_band] = v[m]
    m = (i >= n_band) & (j >= n_band)
    C[i[m] - n_band, j[m] - n_band] = v[m]
    return ab, B, C


def solve_normal(H, g: np.ndarray, n_band: int, damping: float = 0.0,
                 diagnostics: list | None = None) -> np.ndarray:
    """Solve (H + damping*diag(H)) x = -g for a banded matrix with a dense border.

    ``g`` may hold several right-hand sides as columns.
    """
    bw = BANDWIDTH
    if isinstance(H, NormalEquations):
        ab, B, C = H.ab.copy(), H.B, H.C
    else:
        ab, B, C = _split_bordered(H, n_band, bw)
    diagH = np.concatenate([ab[bw], np.diag(C)])
    ab[bw] += damping * ab[bw]
    C = C + np.diag(damping * np.diag(C))
    G = np.asarray(g, float)
    G = G[:, None] if G.ndim == 1 else G
    k = G.shape[1]
    rhs = np.column_stack([-G[:n_band], B])
    for attempt in range(3):
        try:
            X = solveh_banded(ab, rhs, lower=False, check_finite=False)
            S = C - B.T @ X[:, k:]
            cf = cho_factor(S)
            xl = cho_solve(cf, -G[n_band:] - B.T @ X[:, :k])
            xa = X[:, :k] - X[:, k:] @ xl
            x = np.concatenate([xa, xl])
            return x[:, 0] if np.ndim(g) == 1 else x
        except (LinAlgError, ValueError):
            scale = WEAK_PRIOR * max(1.0, float(np.max(np.abs(diagH)))) * (10.0 ** (3 * attempt))
            if diagnostics is not None:
                diagnostics.append(f"indeterminate system: added weak prior {scale:.3g}")
            ab[bw] += scale
            C = C + scale * np.eye(len(C))
    raise EstimatorError("normal equations remain singular after regularization")


def _gauss_newton(lin: Linearizer, est: Estimate, a: int, b: int, marg, report: SolveReport,
                  max_iters: int = GN_MAX_ITERS) -> Estimate:
    n_band = (b - a + 1) * NODE_DIM
    it = 0
    for it in range(1, max_iters + 1):
        r, ne = lin.linearize(est, a, b, marg, normal=True)
        grad = ne.g
        if np.max(np.abs(grad)) < GN_GRAD_TOL:
            it -= 1
            break
        dx = solve_normal(ne, grad, n_band, diagnostics=report.diagnostics)
        est = est.retract(a, b, dx)
        lin.refresh_biases(est, a, b)
        if np.max(np.abs(dx)) < GN_STEP_TOL:
            break
    report.iterations.append(it)
    return est


def _marginalize(lin: Linearizer, est: Estimate, a: int, marg) -> MarginalPrior:
    """Fold node ``a`` and every factor touching it into a prior on (a+1, lever)."""
    r, J = lin.linearize(est, a, a + 1, marg, only_node=a)
    Jd = J.toarray()
    H = Jd.T @ Jd
    gvec = Jd.T @ r
    m = NODE_DIM
    Haa, Hab, Hbb = H[:m, :m], H[:m, m:], H[m:, m:]
    ga, gb = gvec[:m], gvec[m:]
    try:
        cf = cho_factor(Haa)
        Hs = Hbb - Hab.T @ cho_solve(cf, Hab)
        gs = gb - Hab.T @ cho_solve(cf, ga)
    except LinAlgError:
        P = np.linalg.pinv(Haa)
        Hs = Hbb - Hab.T @ P @ Hab
        gs = gb - Hab.T @ P @ ga
    Hs = 0.5 * (Hs + Hs.T)
    w, U = np.linalg.eigh(Hs)
    keep = w > max(w.max(), 1.0) * 1e-14
    sw = np.sqrt(w[keep])
    J0 = (U[:, keep] * sw).T
    r0 = (U[:, keep].T @ gs) / sw
    i = a + 1
    return MarginalPrior(i, est.p[i].copy(), est.v[i].copy(), est.R[i].copy(), est.bias[i].copy(),
                         est.lever.copy(), J0, r0)


def initial_estimate(graph: FactorGraph) -> Estimate:
    """Dead-reckoned initial values from the prior on the first node."""
    n = graph.num_nodes
    pr = graph.prior
    est = Estimate(graph.times.copy(), np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3, 3)),
                   np.tile(pr.bias0, (n, 1)), pr.lever0.copy())
    est.p[0], est.v[0], est.R[0] = pr.x0.r_IB, pr.x0.v_B, pr.x0.R_IB.matrix
    for k in range(1, n):
        est.R[k], est.p[k], est.v[k] = propagate(est.R[k - 1], est.p[k - 1], est.v[k - 1],
                                                 graph.pims[k - 1], est.bias[k - 1], graph.noise.g_vec)
    return est


@dataclass
class OnlineResult:
    """Filtered estimates: row k holds the solution available right after epoch k."""

    estimate: Estimate
    lever_history: np.ndarray
    report: SolveReport
    final_window: Estimate


def solve_fixed_lag(graph: FactorGraph, window: float = 3.0) -> OnlineResult:
    """Causal sliding-window MAP; nodes older than ``window`` seconds are marginalized."""
    if not window >= 1.0:
        raise EstimatorError("window must be at least 1 s")
    n = graph.num_nodes
    lin = Linearizer(graph)
    report = SolveReport()
    est = initial_estimate(graph)
    # nodes beyond the current epoch only hold placeholders until their epoch arrives
    online = est.copy()
    lever_hist = np.zeros((n, LEVER_DIM))
    marg = None
    a = 0
    g_vec = graph.noise.g_vec
    for k in range(n):
        if k > 0:
            lin.refresh_biases(est, k - 1, k)
            est.R[k], est.p[k], est.v[k] = propagate(est.R[k - 1], est.p[k - 1], est.v[k - 1],
                                                     lin.pims[k - 1], est.bias[k - 1], g_vec)
            est.bias[k] = est.bias[k - 1]
        est = _gauss_newton(lin, est, a, k, marg, report)
        online.p[k], online.v[k], online.R[k] = est.p[k], est.v[k], est.R[k]
        online.bias[k] = est.bias[k]
        lever_hist[k] = est.lever
        while math.isfinite(window) and graph.times[k] - graph.times[a] > window and a < k:
            marg = _marginalize(lin, est, a, marg)
            a += 1
    online.lever = est.lever.copy()
    report.reintegrations = lin.reintegrations
    report.cost = graph_cost(graph, online)
    return OnlineResult(online, lever_hist, report, est)


@dataclass
class BatchResult:
    estimate: Estimate
    report: SolveReport
    marginal_std: dict


def _calibration_stds(H, n: int, diagnostics) -> dict:
    n_band = n * NODE_DIM
    cols = list(range(n_band - BIAS_DIM, n_band)) + list(range(n_band, n_band + LEVER_DIM))
    N = n_band + LEVER_DIM
    E = np.zeros((N, len(cols)))
    E[cols, np.arange(len(cols))] = -1.0
    out = solve_normal(H, E, n_band, diagnostics=diagnostics)[cols, np.arange(len(cols))]
    std = np.sqrt(np.maximum(np.array(out), 0.0))
    return {"b_a": std[0:3], "b_g": std[3:6], "r_BP": std[6:9], "r_BM": std[9:12]}


def solve_batch(graph: FactorGraph, init: Estimate | None = None, max_iters: int = LM_MAX_ITERS,
                ) -> BatchResult:
    """Levenberg-Marquardt over the full graph, starting from ``init`` (e.g. the online solution)."""
    est = (initial_estimate(graph) if init is None else init).copy()
    if len(est) != graph.num_nodes:
        raise EstimatorError("initial estimate does not cover every graph variable")
    n = graph.num_nodes
    lin = Linearizer(graph)
    report = SolveReport()
    lin.refresh_biases(est, 0, n - 1)
    cost = lin.cost(est)
    report.initial_cost = cost
    lam = 1e-6
    iters = 0
    H = None
    for iters in range(1, max_iters + 1):
        r, H = lin.linearize(est, 0, n - 1, normal=True)
        grad = H.g
        accepted = converged = False
        while lam < 1e12:
            dx = solve_normal(H, grad, n * NODE_DIM, damping=lam, diagnostics=report.diagnostics)
            if np.max(np.abs(dx)) < GN_STEP_TOL:
                # already at the optimum up to rounding; damping cannot help
                converged = True
                break
            cand = est.retract(0, n - 1, dx)
            c_new = lin.cost(cand)
            if c_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if converged:
            break
        if not accepted:
            report.diagnostics.append("LM could not decrease the cost; stopping")
            break
        decrease = cost - c_new
        est = cand
        lam = max(lam / 10.0, 1e-12)
        if lin.refresh_biases(est, 0, n - 1):
            c_new = lin.cost(est)
        cost = c_new
        # the realized decrease lags the step length by one iteration, so both must be small
        if decrease <= LM_REL_TOL * cost + 1e-15 and np.max(np.abs(dx)) < LM_STEP_TOL:
            break
    report.iterations.append(iters)
    report.cost = cost
    report.reintegrations = lin.reintegrations
    r, H = lin.linearize(est, 0, n - 1, normal=True)
    stds = _calibration_stds(H, n, report.diagnostics)
    return BatchResult(est, report, stds)


def graph_cost(graph: FactorGraph, est: Estimate) -> float:
    """Sum of squared whitened residuals over every factor.

    IMU factors are re-integrated at the estimate's own biases where they moved
    beyond the threshold, so the value matches what the solvers minimize.
    """
    lin = Linearizer(graph)
    lin.refresh_biases(est, 0, graph.num_nodes - 1)
    return lin.cost(est)
