import json

import numpy as np
import pytest

from gpsar.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USER, main
from gpsar.estimator.io import read_imu


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return path


def _scenario(tmp_path, duration=8.0, targets=True, **extra):
    doc = {"duration": duration, "seed": 3,
           "circle": {"radius": 3.0, "speed": 1.0, "altitude": 2.0, "standstill": 2.0, "ramp": 2.0},
           "targets": [{"position": [0.0, 0.0, 0.0]}] if targets else []}
    doc.update(extra)
    return _write(tmp_path / "scenario.json", doc)


@pytest.fixture(scope="module")
def streams(tmp_path_factory):
    d = tmp_path_factory.mktemp("streams")
    scen = _scenario(d)
    assert main(["--out", str(d), "simulate", str(scen)]) == EXIT_OK
    return d


def test_plan_six_circles(tmp_path):
    mission = {"speed": 1.0, "primitives": [
        {"type": "circle", "center": [0, 0], "radius": 7.5, "altitude": 2.0 + 0.4 * k} for k in range(6)]}
    assert main(["--out", str(tmp_path), "plan", str(_write(tmp_path / "m.json", mission))]) == EXIT_OK
    mask = json.loads((tmp_path / "mask.json").read_text())
    assert len(mask["windows"]) == 6
    diag = json.loads((tmp_path / "plan_diagnostics.json").read_text())
    assert diag["measurement_windows"] == 6
    manifest = json.loads((tmp_path / "manifest_plan.json").read_text())
    assert set(manifest["outputs"]) == {"trajectory.json", "mask.json", "plan_diagnostics.json"}


def test_plan_stripmap_window(tmp_path):
    mission = {"primitives": [{"type": "stripmap", "start": [0, 0, 2], "end": [10, 0, 2]}]}
    assert main(["--out", str(tmp_path), "plan", str(_write(tmp_path / "m.json", mission))]) == EXIT_OK
    (w,) = json.loads((tmp_path / "mask.json").read_text())["windows"]
    assert w[1] - w[0] == pytest.approx(10.0, abs=1e-9)


def test_plan_user_errors(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "plan", str(_write(tmp_path / "m.json", {"primitives": []}))]) == EXIT_USER
    assert "primitives" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text('{"primitives": [\n  {"type": "circle",}\n]}')
    assert main(["--out", str(tmp_path), "plan", str(bad)]) == EXIT_USER
    assert "broken.json:2:" in capsys.readouterr().err
    assert main(["--out", str(tmp_path), "plan", str(tmp_path / "missing.json")]) == EXIT_USER
    assert main(["plan"]) == EXIT_USER
    assert main(["frobnicate"]) == EXIT_USER


def test_simulate_row_counts(streams):
    imu = read_imu(streams / "imu.csv")
    assert abs(len(imu) - 8.0 * 1000) <= 1
    diag = json.loads((streams / "simulate_diagnostics.json").read_text())
    assert diag["pulses"] == len(np.arange(0, 8.0 + 1e-9, 1 / 200.0))
    assert (streams / "pulses.bin").exists()


def test_simulate_seed_repeat_gives_identical_checksums(tmp_path):
    scen = _scenario(tmp_path, duration=3.0, targets=False)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, seed in ((a, "5"), (b, "5"), (c, "6")):
        assert main(["--seed", seed, "--out", str(out), "simulate", str(scen)]) == EXIT_OK
    ma, mb, mc = (json.loads((d / "manifest_simulate.json").read_text())["outputs"] for d in (a, b, c))
    assert ma == mb
    assert ma["imu.csv"] != mc["imu.csv"]


def test_simulate_zero_duration(tmp_path):
    scen = _scenario(tmp_path, duration=0.0)
    assert main(["--out", str(tmp_path), "simulate", str(scen)]) == EXIT_OK
    diag = json.loads((tmp_path / "simulate_diagnostics.json").read_text())
    assert diag["imu_rows"] == 0 and diag["position_rows"] == 0 and diag["pulses"] == 0


def test_simulate_rejects_unknown_fields(tmp_path):
    scen = _scenario(tmp_path, bogus=1)
    assert main(["--out", str(tmp_path), "simulate", str(scen)]) == EXIT_USER


def test_estimate_modes_and_flags(streams, tmp_path):
    full = tmp_path / "full"
    assert main(["--out", str(full), "estimate", str(streams)]) == EXIT_OK
    d = json.loads((full / "estimate_diagnostics.json").read_text())
    assert "batch" in d and d["configuration"]["receivers"] == "dual"
    assert d["rmse"]["batch"]["position_rmse_m"] < 0.05
    assert (full / "poses.csv").exists() and (full / "calibration.json").exists()

    online = tmp_path / "online"
    assert main(["--out", str(online), "estimate", str(streams), "--mode", "online-only"]) == EXIT_OK
    d = json.loads((online / "estimate_diagnostics.json").read_text())
    assert "batch" not in d and not (online / "epochs_batch.csv").exists()

    single = tmp_path / "single"
    assert main(["--out", str(single), "estimate", str(streams), "--single-receiver", "--mode",
                 "online-only"]) == EXIT_OK
    assert json.loads((single / "estimate_diagnostics.json").read_text())["configuration"]["receivers"] == "single"

    yawed = tmp_path / "yawed"
    assert main(["--out", str(yawed), "estimate", str(streams), "--heading-offset", "5", "--mode",
                 "online-only"]) == EXIT_OK
    d = json.loads((yawed / "estimate_diagnostics.json").read_text())
    assert d["configuration"]["heading_offset_deg"] == 5.0


def test_estimate_user_and_numeric_errors(streams, tmp_path):
    assert main(["--out", str(tmp_path), "estimate", str(tmp_path / "nowhere")]) == EXIT_USER
    assert main(["--out", str(tmp_path), "estimate", str(streams), "--lever-offset", "1,2"]) == EXIT_USER
    noise = tmp_path / "noise.json"
    noise.write_text('{"sigma_a": NaN}')
    assert main(["--out", str(tmp_path), "estimate", str(streams), "--noise", str(noise)]) == EXIT_USER
    # densities this large overflow the preintegrated covariance: a numerical failure, not a crash
    noise.write_text('{"sigma_a": 1e300, "sigma_g": 1e300}')
    assert main(["--out", str(tmp_path), "estimate", str(streams), "--noise", str(noise)]) == EXIT_NUMERIC


def test_backproject_grid_dims_and_sources(streams, tmp_path):
    out = tmp_path / "truth"
    assert main(["--out", str(out), "backproject", str(streams / "pulses.bin"), "--pose-source", "truth",
                 "--cell", "0.01", "--size", "2.0"]) == EXIT_OK
    meta = json.loads((out / "image.json").read_text())
    assert meta["dims"] == [200, 200, 1]
    rep = json.loads((out / "focus_report.json").read_text())
    assert rep["offset_to_truth_m"] <= 0.0101

    dji = tmp_path / "dji"
    assert main(["--out", str(dji), "backproject", str(streams / "pulses.bin"), "--pose-source", "dji-rtk",
                 "--size", "0.2"]) == EXIT_OK
    bad = tmp_path / "dji_bad"
    assert main(["--out", str(bad), "backproject", str(streams / "pulses.bin"), "--pose-source", "dji-rtk",
                 "--size", "0.2", "--lever-offset", "0.03,0.03,0.03"]) == EXIT_OK
    good = json.loads((dji / "focus_report.json").read_text())
    worse = json.loads((bad / "focus_report.json").read_text())
    assert worse["lever_offset_m"] == [0.03, 0.03, 0.03]
    assert worse["peak_magnitude"] < good["peak_magnitude"]


def test_backproject_is_deterministic(streams, tmp_path):
    args = ["backproject", str(streams / "pulses.bin"), "--pose-source", "truth", "--size", "0.2"]
    assert main(["--out", str(tmp_path / "a"), *args]) == EXIT_OK
    assert main(["--out", str(tmp_path / "b"), *args]) == EXIT_OK
    assert (tmp_path / "a" / "image.bin").read_bytes() == (tmp_path / "b" / "image.bin").read_bytes()


def test_backproject_errors(streams, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["--out", str(tmp_path), "backproject", str(bad), "--streams", str(streams),
                 "--pose-source", "truth"]) == EXIT_USER
    assert main(["--out", str(tmp_path), "backproject", str(streams / "pulses.bin")]) == EXIT_USER
    assert main(["--out", str(tmp_path), "backproject", str(streams / "pulses.bin"), "--pose-source", "truth",
                 "--cell", "0"]) == EXIT_USER


def test_estimate_then_backproject_then_report(streams, tmp_path):
    assert main(["--out", str(tmp_path), "estimate", str(streams)]) == EXIT_OK
    assert main(["--out", str(tmp_path), "backproject", str(streams / "pulses.bin"), "--poses",
                 str(tmp_path / "poses.csv"), "--size", "0.2"]) == EXIT_OK
    assert main(["--out", str(tmp_path), "report"]) == EXIT_OK
    doc = json.loads((tmp_path / "report.json").read_text())
    assert {"estimate_diagnostics", "focus_report"} <= set(doc)
    assert main(["--out", str(tmp_path / "empty"), "report"]) == EXIT_USER


def test_clocksim(tmp_path):
    assert main(["--out", str(tmp_path), "clocksim", "--steps", "150"]) == EXIT_OK
    d = json.loads((tmp_path / "clock_diagnostics.json").read_text())
    assert d["settle_time_s"] is not None and d["max_abs_tau_after_s"] < 0.2e-6
    assert main(["--out", str(tmp_path), "clocksim", "--steps", "0"]) == EXIT_USER
