"""CSV/JSON stream formats consumed and produced by the estimator."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import PoseSeries
from .types import (FIX_RTK, Calibration, EstimatorError, GnssPositions, ImuMeasurements,
                    MovingBaselines)

IMU_HEADER = "t,ax,ay,az,gx,gy,gz"
POS_HEADER = "t,x,y,z,sxx,sxy,sxz,syy,syz,szz,fix_mode"
MB_HEADER = "t,dx,dy,dz,sxx,sxy,sxz,syy,syz,szz"
POSE_HEADER = "t,x,y,z,qw,qx,qy,qz"
_FMT = "%.17g"
_TRIU = np.triu_indices(3)


class FormatError(EstimatorError):
    """Malformed stream file."""


def _write(path, header: str, cols: np.ndarray, extra: list[str] | None = None) -> None:
    lines = [header]
    for k, row in enumerate(cols):
        line = ",".join(_FMT % x for x in row)
        if extra is not None:
            line += "," + extra[k]
        lines.append(line)
    Path(path).write_text("\n".join(lines) + "\n")


def _read(path, header: str, text_cols: int = 0) -> tuple[np.ndarray, list[list[str]]]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not lines or lines[0].strip() != header:
        raise FormatError(f"{path}:1: expected header '{header}'")
    width = len(header.split(","))
    nnum = width - text_cols
    num = np.zeros((len(lines) - 1, nnum))
    text = []
    for i, line in enumerate(lines[1:], start=2):
        parts = line.strip().split(",")
        if len(parts) != width:
            raise FormatError(f"{path}:{i}: expected {width} fields, found {len(parts)}")
        try:
            num[i - 2] = [float(x) for x in parts[:nnum]]
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from exc
        text.append(parts[nnum:])
    return num, text


def _cov_from_triu(u: np.ndarray) -> np.ndarray:
    cov = np.zeros((len(u), 3, 3))
    cov[:, _TRIU[0], _TRIU[1]] = u
    cov[:, _TRIU[1], _TRIU[0]] = u
    return cov


def write_imu(path, imu: ImuMeasurements) -> None:
    _write(path, IMU_HEADER, np.column_stack([imu.t, imu.acc, imu.gyr]))


def read_imu(path) -> ImuMeasurements:
    d, _ = _read(path, IMU_HEADER)
    try:
        return ImuMeasurements(d[:, 0], d[:, 1:4], d[:, 4:7])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_positions(path, pos: GnssPositions) -> None:
    modes = list(pos.fix_mode) if len(pos.fix_mode) == len(pos.t) else [FIX_RTK] * len(pos.t)
    _write(path, POS_HEADER, np.column_stack([pos.t, pos.r_IP, pos.cov[:, _TRIU[0], _TRIU[1]]]), modes)


def read_positions(path) -> GnssPositions:
    d, text = _read(path, POS_HEADER, text_cols=1)
    try:
        return GnssPositions(d[:, 0], d[:, 1:4], _cov_from_triu(d[:, 4:10]), tuple(t[0] for t in text))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_baselines(path, mb: MovingBaselines) -> None:
    _write(path, MB_HEADER, np.column_stack([mb.t, mb.r_PM, mb.cov[:, _TRIU[0], _TRIU[1]]]))


def read_baselines(path) -> MovingBaselines:
    d, _ = _read(path, MB_HEADER)
    try:
        return MovingBaselines(d[:, 0], d[:, 1:4], _cov_from_triu(d[:, 4:10]), np.zeros(len(d)))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_poses(path, series: PoseSeries) -> None:
    _write(path, POSE_HEADER, np.column_stack([series.t, series.position, series.quat]))


def read_poses(path) -> PoseSeries:
    d, _ = _read(path, POSE_HEADER)
    return PoseSeries(d[:, 0], d[:, 1:4], d[:, 4:8])


def write_calibration(path, cal: Calibration, std: dict | None = None) -> None:
    doc = {"b_a": cal.b_a.tolist(), "b_g": cal.b_g.tolist(), "r_BP": cal.r_BP.tolist(),
           "r_BM": cal.r_BM.tolist()}
    if std is not None:
        doc["std"] = {k: np.asarray(v).tolist() for k, v in std.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_calibration(path) -> tuple[Calibration, dict]:
    try:
        doc = json.loads(Path(path).read_text())
        cal = Calibration(np.array(doc["b_a"], float), np.array(doc["b_g"], float),
                          np.array(doc["r_BP"], float), np.array(doc["r_BM"], float))
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return cal, {k: np.array(v) for k, v in doc.get("std", {}).items()}
