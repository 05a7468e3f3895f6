"""Back-projection image formation from range-compressed radar pulses.

A cell's complex amplitude is the weighted sum over pulses of the range
sample at the expected antenna-to-cell path, phase-compensated with the
center-frequency phase of that path.
"""
from __future__ import annotations

import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import Pose3, PoseSeries

C_LIGHT = 299_792_458.0
PULSE_MAGIC = b"GPSARv1"
MAX_PSLR_DB = 120.0
DENSITY_WINDOW = 0.1

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old for numba; the portable layer avoids a warning per process
    numba.config.THREADING_LAYER = "workqueue"


class SarError(ValueError):
    """Invalid imaging input."""


@dataclass(frozen=True)
class SarConfig:
    f_c: float = 2.5e9
    c: float = C_LIGHT
    eps_r: float = 1.0
    surface_height: float = 0.0
    T_BS_tx: Pose3 = field(default_factory=Pose3)
    T_BS_rx: Pose3 = field(default_factory=Pose3)
    weighting: str = "uniform"
    bandwidth: float = 3e9
    # added to every one-way antenna-to-cell range; used for sensitivity studies
    range_bias: float = 0.0

    def __post_init__(self):
        if not self.f_c > 0 or not self.c > 0 or not self.bandwidth > 0:
            raise SarError("f_c, c and bandwidth must be positive")
        if not self.eps_r >= 1.0:
            raise SarError("relative permittivity must be >= 1")
        if self.weighting not in ("uniform", "density"):
            raise SarError(f"unknown weighting mode {self.weighting!r}")

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c

    @property
    def resolution(self) -> float:
        """Range main-lobe half width c / (2 B)."""
        return self.c / (2.0 * self.bandwidth)


@dataclass(frozen=True)
class RadarPulse:
    t: float
    samples: np.ndarray
    bin_spacing: float
    start_range: float
    saturated: bool = False


@dataclass
class RadarPulses:
    """Range-compressed pulses sharing one range axis; bins index the half optical path."""

    t: np.ndarray
    data: np.ndarray
    bin_spacing: float
    start_range: float
    f_c: float = 2.5e9
    saturated: np.ndarray | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or len(self.data) != len(self.t):
            raise SarError("pulse data must be (num_pulses, num_bins)")
        if not self.bin_spacing > 0:
            raise SarError("bin spacing must be positive")
        if self.saturated is None:
            self.saturated = np.zeros(len(self.t), bool)
        self.saturated = np.asarray(self.saturated, bool)
        if len(self.saturated) != len(self.t):
            raise SarError("saturation flags do not match the pulse count")

    def __len__(self):
        return len(self.t)

    @property
    def num_bins(self) -> int:
        return self.data.shape[1]

    def pulse(self, i: int) -> RadarPulse:
        return RadarPulse(float(self.t[i]), self.data[i], self.bin_spacing, self.start_range,
                          bool(self.saturated[i]))

    @property
    def ranges(self) -> np.ndarray:
        return self.start_range + self.bin_spacing * np.arange(self.num_bins)


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid; ``origin`` is the center of cell (0, 0, 0)."""

    origin: tuple
    cell: float
    dims: tuple   # (nx, ny, nz)

    def __post_init__(self):
        if not self.cell > 0:
            raise SarError("cell size must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SarError("grid dims must be three positive integers")

    @classmethod
    def centered(cls, center, size_xy: float, cell: float, nz: int = 1) -> "GridSpec":
        """Square horizontal grid of side ``size_xy`` around ``center``, ``nz`` layers."""
        n = int(round(size_xy / cell))
        c = np.asarray(center, float)
        off = 0.5 * (n - 1) * cell
        return cls((c[0] - off, c[1] - off, c[2] - 0.5 * (nz - 1) * cell), cell, (n, n, nz))

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.cell * np.arange(self.dims[k])

    def position(self, index) -> np.ndarray:
        ix, iy, iz = index
        return np.array([self.origin[0] + ix * self.cell, self.origin[1] + iy * self.cell,
                         self.origin[2] + iz * self.cell])


@dataclass
class VoxelImage:
    """Complex amplitudes stored as (nz, ny, nx), x fastest."""

    grid: GridSpec
    data: np.ndarray
    f_c: float = 2.5e9
    eps_r: float = 1.0

    def __post_init__(self):
        nx, ny, nz = self.grid.dims
        self.data = np.asarray(self.data, np.complex128)
        if self.data.shape != (nz, ny, nx):
            raise SarError("image data shape does not match grid dims")
        if not np.all(np.isfinite(self.data)):
            raise SarError("image amplitudes must be finite")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


@dataclass(frozen=True)
class FocusReport:
    peak_index: tuple         # (ix, iy, iz)
    peak_position: np.ndarray
    peak_magnitude: float
    pslr_db: float
    widths: np.ndarray        # -3 dB width along x, y, z in metres
    offset_to_truth: float | None = None

    def to_dict(self) -> dict:
        return {"peak_index": [int(i) for i in self.peak_index],
                "peak_position": [float(x) for x in self.peak_position],
                "peak_magnitude": float(self.peak_magnitude), "pslr_db": float(self.pslr_db),
                "widths_m": [float(w) for w in self.widths],
                "offset_to_truth_m": None if self.offset_to_truth is None else float(self.offset_to_truth)}


# --------------------------------------------------------------------------
# propagation model shared by the imager and the simulator

@numba.njit(cache=True)
def _optical_path(ax, ay, az, cx, cy, cz, eps_r, zs):
    """Straight-ray optical length; the part below the surface plane is scaled by sqrt(eps_r)."""
    dx, dy, dz = cx - ax, cy - ay, cz - az
    L = math.sqrt(dx * dx + dy * dy + dz * dz)
    if eps_r == 1.0 or cz >= zs:
        return L
    if az <= zs:
        return L * math.sqrt(eps_r)
    frac = (zs - cz) / (az - cz)
    return L * (1.0 - frac) + L * frac * math.sqrt(eps_r)


@numba.njit(cache=True)
def _path_lengths(tx, rx, cells, eps_r, zs, out_tx, out_rx, out_geo):
    for i in range(len(tx)):
        for j in range(len(cells)):
            out_tx[i, j] = _optical_path(tx[i, 0], tx[i, 1], tx[i, 2], cells[j, 0], cells[j, 1], cells[j, 2],
                                         eps_r, zs)
            out_rx[i, j] = _optical_path(rx[i, 0], rx[i, 1], rx[i, 2], cells[j, 0], cells[j, 1], cells[j, 2],
                                         eps_r, zs)
            d0 = tx[i] - cells[j]
            d1 = rx[i] - cells[j]
            out_geo[i, j] = min(math.sqrt(d0 @ d0), math.sqrt(d1 @ d1))


def optical_paths(tx, rx, cells, cfg: SarConfig, min_range: float = 1e-3):
    """Two-way optical path (m) for each (antenna sample, cell) pair, shape (P, K).

    ``cfg.range_bias`` is added to both one-way legs.
    """
    tx = np.atleast_2d(np.asarray(tx, float))
    rx = np.atleast_2d(np.asarray(rx, float))
    cells = np.atleast_2d(np.asarray(cells, float))
    P, K = len(tx), len(cells)
    a, b, geo = np.zeros((P, K)), np.zeros((P, K)), np.zeros((P, K))
    _path_lengths(tx, rx, cells, float(cfg.eps_r), float(cfg.surface_height), a, b, geo)
    if np.any(geo <= min_range):
        raise SarError("cell coincides with an antenna phase center")
    return a + b + 2.0 * cfg.range_bias


def expected_phase(tx_pose: Pose3, rx_pose: Pose3, cell, cfg: SarConfig) -> tuple[float, float]:
    """Expected phase (rad, unwrapped) and two-way delay (s) of a point at ``cell``."""
    L = optical_paths(tx_pose.translation, rx_pose.translation, cell, cfg)[0, 0]
    delay = L / cfg.c
    return 2.0 * math.pi * cfg.f_c * delay, delay


# --------------------------------------------------------------------------
# imaging

def uniform_weights(t, mode: str = "uniform", window: float = DENSITY_WINDOW) -> np.ndarray:
    """Per-pulse normalization weights summing to one."""
    t = np.asarray(t, float)
    n = len(t)
    if n == 0:
        return np.zeros(0)
    if mode == "uniform":
        return np.full(n, 1.0 / n)
    if mode != "density":
        raise SarError(f"unknown weighting mode {mode!r}")
    order = np.argsort(t, kind="stable")
    ts = t[order]
    # the tolerance keeps neighbours that sit exactly on the window edge from flickering in and out
    tol = 1e-9 * max(1.0, float(np.abs(ts).max()))
    lo = np.searchsorted(ts, ts - window - tol, side="left")
    hi = np.searchsorted(ts, ts + window + tol, side="right") - 1
    # local pulse spacing: the window span over the gaps it holds; a lone pulse owns the whole window
    gaps = hi - lo
    spacing = np.where(gaps > 0, (ts[hi] - ts[lo]) / np.maximum(gaps, 1), 2.0 * window)
    w = np.empty(n)
    w[order] = spacing
    return w / w.sum()


@numba.njit(cache=True, parallel=True)
def _bp_kernel(tx, rx, data, w, start, spacing, kph, bias, eps_r, zs, ox, oy, oz, cell, nx, ny, nz,
               nparts, out_re, out_im):
    nrows = ny * nz
    nb = data.shape[1]
    chunk = (nrows + nparts - 1) // nparts
    inv = 1.0 / spacing
    for part in numba.prange(nparts):
        r_lo = part * chunk
        r_hi = min(nrows, r_lo + chunk)
        for p in range(len(w)):
            wp = w[p]
            tx0, tx1, tx2 = tx[p, 0], tx[p, 1], tx[p, 2]
            rx0, rx1, rx2 = rx[p, 0], rx[p, 1], rx[p, 2]
            for row in range(r_lo, r_hi):
                iy = row % ny
                iz = row // ny
                cy = oy + iy * cell
                cz = oz + iz * cell
                # straight rays in air: only the x offset varies along the row
                fast = eps_r == 1.0 or cz >= zs
                qt = (cy - tx1) ** 2 + (cz - tx2) ** 2
                qr = (cy - rx1) ** 2 + (cz - rx2) ** 2
                base = row * nx
                for ix in range(nx):
                    cx = ox + ix * cell
                    if fast:
                        dt = cx - tx0
                        dr = cx - rx0
                        L = math.sqrt(dt * dt + qt) + math.sqrt(dr * dr + qr) + 2.0 * bias
                    else:
                        L = (_optical_path(tx0, tx1, tx2, cx, cy, cz, eps_r, zs)
                             + _optical_path(rx0, rx1, rx2, cx, cy, cz, eps_r, zs) + 2.0 * bias)
                    f = (0.5 * L - start) * inv
                    if f < 0.0:
                        continue
                    i = int(f)
                    if i >= nb - 1:
                        continue
                    a = f - i
                    s0 = data[p, i]
                    s1 = data[p, i + 1]
                    sr = s0.real + a * (s1.real - s0.real)
                    si = s0.imag + a * (s1.imag - s0.imag)
                    ph = kph * L
                    c = math.cos(ph)
                    s = math.sin(ph)
                    # (sr + j si) * exp(-j ph)
                    out_re[base + ix] += wp * (sr * c + si * s)
                    out_im[base + ix] += wp * (si * c - sr * s)


def _in_windows(t: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(len(t), bool)
    keep = np.zeros(len(t), bool)
    for t0, t1 in mask:
        keep |= (t >= t0) & (t <= t1)
    return keep


def _positions_at(series, t: np.ndarray, active: np.ndarray, max_gap: float) -> np.ndarray:
    """Antenna positions of the active pulses from a pose series or a per-pulse array."""
    if isinstance(series, PoseSeries):
        ta = t[active]
        if len(series.t) == len(t) and np.array_equal(series.t, t):
            return np.ascontiguousarray(series.position[active])
        try:
            return np.ascontiguousarray(series.interpolate(ta, max_gap=max_gap).position)
        except ValueError as exc:
            raise SarError(f"pose gap: {exc}") from exc
    pos = np.asarray(series, float)
    if pos.shape != (len(t), 3):
        raise SarError("antenna positions must be (num_pulses, 3)")
    return np.ascontiguousarray(pos[active])


def backproject(pulses: RadarPulses, tx_poses, rx_poses, grid: GridSpec, cfg: SarConfig | None = None,
                mask=None, workers: int = 1, max_gap: float = 0.05) -> VoxelImage:
    """Form a complex image on ``grid``.

    ``tx_poses``/``rx_poses`` are antenna pose series (interpolated at pulse
    times) or per-pulse position arrays. ``mask`` is a list of (t0, t1)
    windows. The sum for every cell runs over pulses in time order, so the
    result does not depend on ``workers``.
    """
    cfg = cfg or SarConfig(f_c=pulses.f_c)
    active = _in_windows(pulses.t, mask) & ~pulses.saturated
    nx, ny, nz = grid.dims
    if not np.any(active):
        warnings.warn("no pulse inside the mask windows; image is empty", RuntimeWarning, stacklevel=2)
        return VoxelImage(grid, np.zeros((nz, ny, nx), complex), cfg.f_c, cfg.eps_r)
    t = pulses.t[active]
    tx = _positions_at(tx_poses, pulses.t, active, max_gap)
    rx = _positions_at(rx_poses, pulses.t, active, max_gap)
    w = uniform_weights(t, cfg.weighting)
    # single-precision input (the file format) stays single; double input keeps its precision
    dtype = np.complex128 if pulses.data.dtype == np.complex128 else np.complex64
    data = np.ascontiguousarray(pulses.data[active], dtype=dtype)
    workers = max(1, int(workers))
    nparts = workers
    prev = numba.get_num_threads()
    numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    try:
        re = np.zeros(nx * ny * nz)
        im = np.zeros(nx * ny * nz)
        _bp_kernel(tx, rx, data, w, float(pulses.start_range), float(pulses.bin_spacing),
                   2.0 * math.pi * cfg.f_c / cfg.c, float(cfg.range_bias), float(cfg.eps_r),
                   float(cfg.surface_height), float(grid.origin[0]), float(grid.origin[1]),
                   float(grid.origin[2]), float(grid.cell), nx, ny, nz, nparts, re, im)
    finally:
        numba.set_num_threads(prev)
    return VoxelImage(grid, (re + 1j * im).reshape(nz, ny, nx), cfg.f_c, cfg.eps_r)


def antenna_series(body: PoseSeries, cfg: SarConfig) -> tuple[PoseSeries, PoseSeries]:
    """TX and RX phase-center series from body poses and the configured extrinsics."""
    return body.compose_right(cfg.T_BS_tx), body.compose_right(cfg.T_BS_rx)


def coherent_add(images) -> VoxelImage:
    images = list(images)
    if not images:
        raise SarError("nothing to add")
    g = images[0].grid
    for im in images[1:]:
        if im.grid != g:
            raise SarError("images are defined on different grids")
    return VoxelImage(g, sum(im.data for im in images), images[0].f_c, images[0].eps_r)


def _width(profile: np.ndarray, k: int, cell: float) -> float:
    thr = profile[k] / math.sqrt(2.0)
    lo = k
    while lo > 0 and profile[lo - 1] >= thr:
        lo -= 1
    hi = k
    while hi < len(profile) - 1 and profile[hi + 1] >= thr:
        hi += 1
    return (hi - lo + 1) * cell


def focus_metrics(image: VoxelImage, truth=None, exclusion: int = 2) -> FocusReport:
    """Peak, peak-to-sidelobe ratio outside a (2*exclusion+1)^3 box and -3 dB widths."""
    mag = image.magnitude
    if mag.size == 0:
        raise SarError("empty image")
    iz, iy, ix = np.unravel_index(int(np.argmax(mag)), mag.shape)
    peak = float(mag[iz, iy, ix])
    outside = mag.copy()
    outside[max(iz - exclusion, 0):iz + exclusion + 1, max(iy - exclusion, 0):iy + exclusion + 1,
            max(ix - exclusion, 0):ix + exclusion + 1] = 0.0
    side = float(outside.max())
    if peak == 0.0:
        pslr = 0.0
    elif side == 0.0:
        pslr = MAX_PSLR_DB
    else:
        pslr = min(MAX_PSLR_DB, 20.0 * math.log10(peak / side))
    cell = image.grid.cell
    widths = np.array([_width(mag[iz, iy, :], ix, cell), _width(mag[iz, :, ix], iy, cell),
                       _width(mag[:, iy, ix], iz, cell)])
    pos = image.grid.position((ix, iy, iz))
    off = None if truth is None else float(np.linalg.norm(pos - np.asarray(truth, float)))
    return FocusReport((int(ix), int(iy), int(iz)), pos, peak, pslr, widths, off)


# --------------------------------------------------------------------------
# persistence

def _pulse_dtype(num_bins: int) -> np.dtype:
    return np.dtype([("t", "<f8"), ("iq", "<f4", (num_bins, 2)), ("sat", "u1")])


def write_pulses(path, pulses: RadarPulses) -> None:
    header = json.dumps({"num_bins": pulses.num_bins, "bin_spacing_m": pulses.bin_spacing,
                         "start_range_m": pulses.start_range, "f_c": pulses.f_c}, sort_keys=True).encode()
    rec = np.zeros(len(pulses), _pulse_dtype(pulses.num_bins))
    rec["t"] = pulses.t
    rec["iq"][..., 0] = pulses.data.real
    rec["iq"][..., 1] = pulses.data.imag
    rec["sat"] = pulses.saturated
    with open(path, "wb") as fh:
        fh.write(PULSE_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(rec.tobytes())


def read_pulses(path) -> RadarPulses:
    raw = Path(path).read_bytes()
    m = len(PULSE_MAGIC)
    if raw[:m] != PULSE_MAGIC:
        raise SarError(f"{path}: bad magic at offset 0")
    if len(raw) < m + 4:
        raise SarError(f"{path}: truncated header length at offset {m}")
    (hlen,) = struct.unpack("<I", raw[m:m + 4])
    off = m + 4
    try:
        head = json.loads(raw[off:off + hlen])
        nb = int(head["num_bins"])
        spacing, start, f_c = float(head["bin_spacing_m"]), float(head["start_range_m"]), float(head["f_c"])
    except (ValueError, KeyError, TypeError) as exc:
        raise SarError(f"{path}: invalid JSON header at offset {off}: {exc}") from exc
    off += hlen
    dt = _pulse_dtype(nb)
    body = len(raw) - off
    if body % dt.itemsize:
        raise SarError(f"{path}: truncated record at offset {off + (body // dt.itemsize) * dt.itemsize}")
    rec = np.frombuffer(raw, dt, offset=off)
    data = rec["iq"][..., 0].astype(np.complex64)
    data.imag = rec["iq"][..., 1]
    return RadarPulses(rec["t"].copy(), data, spacing, start, f_c, rec["sat"].astype(bool))


def write_image(prefix, image: VoxelImage) -> dict:
    """Write ``prefix.bin`` (float32 real plane then imaginary plane), ``prefix.json`` and ``prefix.pgm``."""
    prefix = Path(prefix)
    planes = np.stack([image.data.real, image.data.imag]).astype("<f4")
    prefix.with_suffix(".bin").write_bytes(planes.tobytes())
    meta = {"origin": [float(x) for x in image.grid.origin], "cell": float(image.grid.cell),
            "dims": [int(d) for d in image.grid.dims], "f_c": float(image.f_c), "eps_r": float(image.eps_r)}
    prefix.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_pgm(prefix.with_suffix(".pgm"), image)
    return meta


def read_image(prefix) -> VoxelImage:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    nx, ny, nz = meta["dims"]
    planes = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), "<f4")
    if planes.size != 2 * nx * ny * nz:
        raise SarError(f"{prefix}.bin: size does not match dims")
    planes = planes.reshape(2, nz, ny, nx).astype(float)
    grid = GridSpec(tuple(meta["origin"]), meta["cell"], (nx, ny, nz))
    return VoxelImage(grid, planes[0] + 1j * planes[1], meta["f_c"], meta["eps_r"])


def write_pgm(path, image: VoxelImage, clip_fraction: float = 0.02) -> None:
    """8-bit magnitude (maximum over z), north up, amplitudes above the top ``clip_fraction`` saturated."""
    mag = image.magnitude.max(axis=0)
    top = float(np.quantile(mag, 1.0 - clip_fraction)) if mag.size else 0.0
    if top <= 0:
        top = float(mag.max()) or 1.0
    img = np.clip(np.round(255.0 * mag / top), 0, 255).astype(np.uint8)[::-1]
    ny, nx = img.shape
    Path(path).write_bytes(f"P5\n{nx} {ny}\n255\n".encode() + img.tobytes())
