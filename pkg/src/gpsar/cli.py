"""``gpsar`` command line: plan, simulate, estimate, backproject, clocksim, report.

Every stage writes its products plus ``manifest_<stage>.json`` (inputs,
SHA-256 of every output, seed, tool version) and a JSON diagnostics file
into ``--out``. Exit codes: 0 success, 2 user or configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USER = 2
EXIT_NUMERIC = 3


class UserError(Exception):
    """Bad arguments, missing files or invalid configuration."""


class NumericalFailure(Exception):
    """A solver or the imager produced unusable numbers."""


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    stage: str
    out: Path
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    outputs: list = field(default_factory=list)

    def require(self, **paths) -> None:
        for name, p in paths.items():
            if p is None:
                continue
            if not Path(p).exists():
                raise UserError(f"{self.stage}: input {name} not found: {p}")
            self.inputs[name] = str(p)

    def add(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def write(self) -> Path:
        doc = {"stage": self.stage, "tool_version": tool_version(), "seed": self.seed,
               "inputs": self.inputs,
               "outputs": {p.name: sha256(p) for p in sorted(self.outputs, key=lambda q: q.name)}}
        path = self.out / f"manifest_{self.stage}.json"
        _write_json(path, doc)
        return path


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UserError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc


def _vec3(text: str, name: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError as exc:
        raise UserError(f"{name}: expected three comma-separated numbers, got {text!r}") from exc
    if v.shape != (3,):
        raise UserError(f"{name}: expected three comma-separated numbers, got {text!r}")
    return v


def _finite(name: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure(f"{name} produced non-finite values")


# --------------------------------------------------------------------------
# plan

def cmd_plan(args) -> dict:
    from .trajectory import TrajectoryError, mission_mask, plan_mission

    man = RunManifest("plan", args.out, seed=args.seed)
    man.require(mission=args.mission)
    mission = _read_json(args.mission)
    try:
        traj = plan_mission(mission)
    except TrajectoryError as exc:
        raise UserError(str(exc)) from exc
    windows = mission_mask(traj)
    tpath, mpath, dpath = args.out / "trajectory.json", args.out / "mask.json", args.out / "plan_diagnostics.json"
    _write_json(tpath, traj.to_dict())
    _write_json(mpath, {"windows": [list(w) for w in windows]})
    diag = {"segments": len(traj.segments), "duration_s": traj.duration,
            "kinds": list(traj.kinds), "measurement_windows": len(windows),
            "measurement_time_s": float(sum(b - a for a, b in windows))}
    _write_json(dpath, diag)
    man.add(tpath, mpath, dpath)
    man.write()
    return diag


# --------------------------------------------------------------------------
# simulate

STREAM_FILES = ("imu.csv", "gnss_pos.csv", "gnss_mb.csv", "attitude.csv", "truth.csv")


def cmd_simulate(args) -> dict:
    from .estimator.io import write_baselines, write_calibration, write_imu, write_poses, write_positions
    from .estimator.types import Calibration
    from .sar import write_pulses
    from .sim import ScenarioConfig, simulate

    man = RunManifest("simulate", args.out)
    man.require(scenario=args.scenario, trajectory=args.trajectory)
    doc = _read_json(args.scenario)
    if args.trajectory is not None:
        doc["source"] = "trajectory"
        doc["trajectory"] = _read_json(args.trajectory)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = ScenarioConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UserError(f"{args.scenario}: {exc}") from exc
    man.seed = cfg.seed
    sc = simulate(cfg)
    out = args.out
    write_imu(out / "imu.csv", sc.imu)
    write_positions(out / "gnss_pos.csv", sc.positions)
    write_baselines(out / "gnss_mb.csv", sc.baselines)
    write_poses(out / "attitude.csv", sc.attitude)
    write_poses(out / "truth.csv", sc.truth.poses())
    # CAD values: the true lever arms, zero biases
    write_calibration(out / "calibration_cad.json", Calibration(r_BP=cfg.r_BP, r_BM=cfg.r_BM))
    _write_json(out / "scenario.json", cfg.to_dict())
    _write_json(out / "sar.json", {"radar": cfg.radar, "targets": cfg.targets})
    files = [out / f for f in STREAM_FILES] + [out / "calibration_cad.json", out / "scenario.json",
                                               out / "sar.json"]
    if sc.radar is not None:
        write_pulses(out / "pulses.bin", sc.radar)
        files.append(out / "pulses.bin")
    diag = {"imu_rows": len(sc.imu), "position_rows": len(sc.positions), "baseline_rows": len(sc.baselines),
            "pulses": 0 if sc.radar is None else len(sc.radar), "duration_s": cfg.duration, "seed": cfg.seed}
    _write_json(out / "simulate_diagnostics.json", diag)
    man.add(*files, out / "simulate_diagnostics.json")
    man.write()
    return diag


# --------------------------------------------------------------------------
# estimate

def _noise_config(path):
    from .estimator.types import NoiseConfig
    if path is None:
        return NoiseConfig()
    doc = _read_json(path)
    try:
        return NoiseConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise UserError(f"{path}: {exc}") from exc


def _rmse(est, truth) -> dict:
    from .core import batch_log
    tr = truth.interpolate(est.t)
    dp = est.p - tr.position
    dR = batch_log(np.einsum("kji,kjl->kil", tr.rotations, est.R))
    return {"position_rmse_m": float(math.sqrt(np.mean(np.sum(dp**2, axis=1)))),
            "rotation_rmse_rad": float(math.sqrt(np.mean(np.sum(dR**2, axis=1)))),
            "position_max_m": float(np.max(np.linalg.norm(dp, axis=1)))}


def cmd_estimate(args) -> dict:
    from .estimator import (Calibration, build_graph, predict_intermediate, solve_batch, solve_fixed_lag)
    from .estimator.io import (read_baselines, read_calibration, read_imu, read_poses, read_positions,
                               write_calibration, write_poses)
    from .estimator.poses import estimate_poses

    d = Path(args.streams)
    cal_path = Path(args.calibration) if args.calibration else d / "calibration_cad.json"
    man = RunManifest("estimate", args.out, seed=args.seed)
    man.require(imu=d / "imu.csv", positions=d / "gnss_pos.csv", calibration=cal_path,
                baselines=None if args.single_receiver and not (d / "gnss_mb.csv").exists()
                else d / "gnss_mb.csv", noise=args.noise)
    imu = read_imu(d / "imu.csv")
    pos = read_positions(d / "gnss_pos.csv")
    mb = read_baselines(d / "gnss_mb.csv") if (d / "gnss_mb.csv").exists() else None
    cad, _ = read_calibration(cal_path)
    if args.lever_offset is not None:
        cad = Calibration(cad.b_a, cad.b_g, cad.r_BP + _vec3(args.lever_offset, "--lever-offset"), cad.r_BM)
    noise = _noise_config(args.noise)
    graph = build_graph(imu, pos, mb, noise, cad, use_baseline=not args.single_receiver,
                        heading_offset=math.radians(args.heading_offset))
    online = solve_fixed_lag(graph, args.window)
    _finite("fixed-lag solver", online.estimate.p, online.estimate.lever)
    diag = {"configuration": {"receivers": "single" if args.single_receiver else "dual",
                              "heading_offset_deg": args.heading_offset, "mode": args.mode,
                              "lever_offset_m": None if args.lever_offset is None
                              else _vec3(args.lever_offset, "--lever-offset").tolist()},
            "nodes": graph.num_nodes,
            "online": {"cost": online.report.cost, "iterations": int(sum(online.report.iterations)),
                       "reintegrations": online.report.reintegrations,
                       "lever": online.estimate.lever.tolist()}}
    final, stds = online.estimate, None
    files = []
    write_poses(args.out / "epochs_online.csv", estimate_poses(online.estimate))
    files.append(args.out / "epochs_online.csv")
    if args.mode != "online-only":
        batch = solve_batch(graph, online.estimate)
        _finite("batch solver", batch.estimate.p, batch.estimate.lever)
        final, stds = batch.estimate, batch.marginal_std
        diag["batch"] = {"cost": batch.report.cost, "initial_cost": batch.report.initial_cost,
                         "iterations": int(sum(batch.report.iterations)),
                         "reintegrations": batch.report.reintegrations,
                         "lever": batch.estimate.lever.tolist(),
                         "lever_std": {k: v.tolist() for k, v in stds.items()},
                         "diagnostics": list(batch.report.diagnostics)}
        write_poses(args.out / "epochs_batch.csv", estimate_poses(batch.estimate))
        files.append(args.out / "epochs_batch.csv")
    body = predict_intermediate(final, imu, graph.noise.g_vec)
    _finite("pose prediction", body.position, body.quat)
    write_poses(args.out / "poses.csv", body)
    b = final.bias[-1]
    write_calibration(args.out / "calibration.json", Calibration(b[:3], b[3:], final.lever[:3], final.lever[3:]),
                      stds)
    files += [args.out / "poses.csv", args.out / "calibration.json"]
    if (d / "truth.csv").exists():
        truth = read_poses(d / "truth.csv")
        man.inputs["truth"] = str(d / "truth.csv")
        diag["rmse"] = {"online": _rmse(online.estimate, truth)}
        if args.mode != "online-only":
            diag["rmse"]["batch"] = _rmse(final, truth)
        cad_true, _ = read_calibration(d / "calibration_cad.json") if (d / "calibration_cad.json").exists() \
            else (None, None)
        if cad_true is not None:
            diag["lever_error_m"] = (final.lever - cad_true.lever).tolist()
    _write_json(args.out / "estimate_diagnostics.json", diag)
    man.add(*files, args.out / "estimate_diagnostics.json")
    man.write()
    return diag


# --------------------------------------------------------------------------
# backproject

def _grid(args, sar_doc):
    from .sar import GridSpec
    if args.center is not None:
        center = _vec3(args.center, "--center")
    elif sar_doc.get("targets"):
        center = np.asarray(sar_doc["targets"][0]["position"], float)
    else:
        center = np.zeros(3)
    if not args.cell > 0 or not args.size > 0 or args.nz < 1:
        raise UserError("--cell and --size must be positive and --nz at least 1")
    return GridSpec.centered(center, args.size, args.cell, args.nz)


def _mask(path):
    if path is None:
        return None
    doc = _read_json(path)
    try:
        return [(float(a), float(b)) for a, b in doc["windows"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise UserError(f"{path}: expected {{\"windows\": [[t0, t1], ...]}}") from exc


def cmd_backproject(args) -> dict:
    from .core import Pose3
    from .estimator.io import read_calibration, read_poses, read_positions
    from .estimator.poses import dji_rtk_compose
    from .sar import antenna_series, backproject, focus_metrics, read_pulses, write_image
    from .sim import sar_config_from_dict

    d = Path(args.streams) if args.streams else Path(args.pulses).parent
    sar_path = Path(args.sar) if args.sar else d / "sar.json"
    man = RunManifest("backproject", args.out, seed=args.seed)
    man.require(pulses=args.pulses, sar=sar_path, mask=args.mask)
    sar_doc = _read_json(sar_path)
    try:
        cfg = sar_config_from_dict(sar_doc.get("radar", {}), weighting=args.weighting,
                                   range_bias=args.range_bias)
    except (TypeError, ValueError) as exc:
        raise UserError(f"{sar_path}: {exc}") from exc
    pulses = read_pulses(args.pulses)
    grid = _grid(args, sar_doc)
    offset = np.zeros(3) if args.lever_offset is None else _vec3(args.lever_offset, "--lever-offset")
    notes = []
    if args.pose_source == "dji-rtk":
        cal_path = Path(args.calibration) if args.calibration else d / "calibration_cad.json"
        man.require(positions=d / "gnss_pos.csv", attitude=d / "attitude.csv", calibration=cal_path)
        pos = read_positions(d / "gnss_pos.csv")
        att = read_poses(d / "attitude.csv")
        cad, _ = read_calibration(cal_path)
        inside = (pulses.t >= max(pos.t[0], att.t[0])) & (pulses.t <= min(pos.t[-1], att.t[-1]))
        # the DJI frame sits at the position antenna with body orientation
        T_DB = Pose3(translation=-(cad.r_BP + offset))
        tx, rx = dji_rtk_compose(pos, att, T_DB, [cfg.T_BS_tx, cfg.T_BS_rx], pulses.t[inside])
        if not np.all(inside):
            notes.append(f"{int(np.sum(~inside))} pulses outside the RTK/attitude span skipped")
            pulses.saturated = pulses.saturated | ~inside
            tx_full = np.zeros((len(pulses), 3))
            rx_full = np.zeros((len(pulses), 3))
            tx_full[inside], rx_full[inside] = tx.position, rx.position
            tx, rx = tx_full, rx_full
    else:
        if args.pose_source == "truth":
            poses_path = d / "truth.csv"
        else:
            poses_path = Path(args.poses) if args.poses else None
        if poses_path is None:
            raise UserError("--poses is required with --pose-source estimate")
        man.require(poses=poses_path)
        body = read_poses(poses_path)
        if args.lever_offset is not None:
            notes.append("--lever-offset only affects the dji-rtk chain; estimated body poses already "
                         "absorb the calibrated antenna position")
        tx, rx = antenna_series(body, cfg)
    image = backproject(pulses, tx, rx, grid, cfg, mask=_mask(args.mask), workers=args.workers)
    _finite("back-projection", image.data)
    meta = write_image(args.out / "image", image)
    truth = sar_doc["targets"][0]["position"] if sar_doc.get("targets") else None
    rep = focus_metrics(image, truth).to_dict()
    rep.update({"pose_source": args.pose_source, "grid": meta, "notes": notes,
                "lever_offset_m": offset.tolist(), "range_bias_m": args.range_bias})
    _write_json(args.out / "focus_report.json", rep)
    man.add(args.out / "image.bin", args.out / "image.json", args.out / "image.pgm",
            args.out / "focus_report.json")
    man.write()
    return rep


# --------------------------------------------------------------------------
# clocksim

def cmd_clocksim(args) -> dict:
    from .clock_sync import OscillatorTruth, ServoConfig, simulate_servo

    if args.steps < 1:
        raise UserError("--steps must be at least 1")
    man = RunManifest("clocksim", args.out, seed=args.seed)
    seed = 0 if args.seed is None else args.seed
    run = simulate_servo(OscillatorTruth(), args.tau0, args.steps, seed, ServoConfig(estimate=not args.oracle))
    _finite("clock servo", run.tau_true)
    run.to_csv(args.out / "clock.csv")
    after = np.abs(run.tau_true[run.t >= args.settle])
    inside = np.abs(run.tau_true) < args.threshold
    # first time after which the offset stays inside the threshold
    outside = np.nonzero(~inside)[0]
    settle = float(run.t[0]) if len(outside) == 0 else (
        float(run.t[outside[-1] + 1]) if outside[-1] + 1 < len(run.t) else None)
    diag = {"tau0_s": args.tau0, "steps": args.steps, "seed": seed, "threshold_s": args.threshold,
            "settle_time_s": settle,
            "max_abs_tau_after_s": float(after.max()) if len(after) else None,
            "settle_check_time_s": args.settle}
    _write_json(args.out / "clock_diagnostics.json", diag)
    man.add(args.out / "clock.csv", args.out / "clock_diagnostics.json")
    man.write()
    return diag


# --------------------------------------------------------------------------
# report

REPORT_SOURCES = ("plan_diagnostics.json", "simulate_diagnostics.json", "estimate_diagnostics.json",
                  "focus_report.json", "clock_diagnostics.json")


def cmd_report(args) -> dict:
    src = Path(args.directory) if args.directory else args.out
    if not src.is_dir():
        raise UserError(f"report: not a directory: {src}")
    doc = {}
    for name in REPORT_SOURCES:
        p = src / name
        if p.exists():
            doc[name.removesuffix(".json")] = _read_json(p)
    if not doc:
        raise UserError(f"report: no diagnostics found in {src}")
    _write_json(args.out / "report.json", doc)
    lines = [f"# gpsar report ({src})"]
    est = doc.get("estimate_diagnostics", {})
    for k, v in est.get("rmse", {}).items():
        lines.append(f"{k}: position RMSE {1e3 * v['position_rmse_m']:.2f} mm, "
                     f"rotation RMSE {math.degrees(v['rotation_rmse_rad']):.3f} deg")
    fr = doc.get("focus_report")
    if fr:
        lines.append(f"image: peak {fr['peak_magnitude']:.4g} at {fr['peak_position']}, PSLR {fr['pslr_db']:.1f} dB")
    ck = doc.get("clock_diagnostics")
    if ck:
        lines.append(f"clock: settle time {ck['settle_time_s']} s")
    (args.out / "report.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    man = RunManifest("report", args.out, seed=args.seed, inputs={"directory": str(src)})
    man.add(args.out / "report.json", args.out / "report.md")
    man.write()
    return doc


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpsar", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None, help="override the scenario/random seed")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory (created if missing)")
    ap.add_argument("--workers", type=int, default=1, help="threads for back-projection")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="mission JSON -> trajectory.json + mask.json")
    p.add_argument("mission")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="scenario JSON -> sensor streams")
    p.add_argument("scenario")
    p.add_argument("--trajectory", help="planned trajectory.json to fly instead of the scenario source")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="streams -> poses.csv + calibration.json")
    p.add_argument("streams", help="directory holding imu.csv, gnss_pos.csv, gnss_mb.csv")
    p.add_argument("--calibration", help="CAD calibration JSON (default: streams/calibration_cad.json)")
    p.add_argument("--noise", help="NoiseConfig JSON")
    p.add_argument("--mode", choices=("full", "online-only"), default="full")
    p.add_argument("--single-receiver", action="store_true", help="drop the moving-baseline factors")
    p.add_argument("--heading-offset", type=float, default=0.0, help="yaw the initial prior (deg)")
    p.add_argument("--lever-offset", help="corrupt the CAD position-antenna lever arm, 'dx,dy,dz' in m")
    p.add_argument("--window", type=float, default=3.0, help="fixed-lag window (s)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("backproject", help="pulses + poses -> image + focus_report.json")
    p.add_argument("pulses")
    p.add_argument("--poses", help="body pose CSV (estimate output)")
    p.add_argument("--pose-source", choices=("estimate", "dji-rtk", "truth"), default="estimate")
    p.add_argument("--streams", help="stream directory (default: the directory of the pulse file)")
    p.add_argument("--sar", help="radar config JSON (default: streams/sar.json)")
    p.add_argument("--calibration", help="CAD calibration for the dji-rtk chain")
    p.add_argument("--mask", help="mask.json with measurement windows")
    p.add_argument("--cell", type=float, default=0.01)
    p.add_argument("--size", type=float, default=2.0, help="horizontal grid side (m)")
    p.add_argument("--nz", type=int, default=1)
    p.add_argument("--center", help="grid center 'x,y,z' (default: first target)")
    p.add_argument("--lever-offset", help="corrupt the position-antenna lever arm of the dji-rtk chain")
    p.add_argument("--weighting", choices=("uniform", "density"), default="uniform")
    p.add_argument("--range-bias", type=float, default=0.0, help="one-way range bias added when imaging (m)")
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("clocksim", help="PPS clock servo simulation")
    p.add_argument("--tau0", type=float, default=6e-6)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--threshold", type=float, default=0.2e-6)
    p.add_argument("--settle", type=float, default=100.0)
    p.add_argument("--oracle", action="store_true", help="feed the controller the true oscillator model")
    p.set_defaults(func=cmd_clocksim)

    p = sub.add_parser("report", help="collect stage diagnostics into report.json")
    p.add_argument("directory", nargs="?")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    from .estimator.types import EstimatorError
    from .sar import SarError
    from .trajectory import TrajectoryError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USER
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except (NumericalFailure, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        print(f"gpsar {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UserError, EstimatorError, SarError, TrajectoryError, OSError, ValueError) as exc:
        print(f"gpsar {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
