import csv
import json
import subprocess
import sys

import pytest

from mdiqkd.cli import EXIT_CODES, compensation_grid, format_number, main
from mdiqkd.config import loads_config

PARAMS = """\
params: {mu_ax: 0.012, mu_ay: 0.044, mu_az: 0.74, p_ax: 0.201, p_ay: 0.042, p_az: 0.732,
         mu_bx: 0.092, mu_by: 0.337, mu_bz: 0.656, p_bx: 0.198, p_by: 0.044, p_bz: 0.733}
"""
QUICK = "optimizer: {multistart: 1, prescan: 0, max_iter: 15, full_neighborhood: never}\n"


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text("schema_version: 1\n" + text)
    return str(p)


def read_csv(path):
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# config ")
    return lines[0].split()[-1], list(csv.DictReader(lines[1:]))


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_format_number():
    assert format_number(1.23456789e-5) == "1.23457e-05"
    assert format_number(3) == "3" and format_number("normal") == "normal"


def test_evaluate_writes_report(tmp_path):
    cfg = write(tmp_path, "task: evaluate\nchannel: {A: {km: 10}, B: {km: 60}}\n" + PARAMS)
    out = tmp_path / "r.csv"
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    digest, rows = read_csv(out)
    values = {r["quantity"]: r["value"] for r in rows}
    assert float(values["R_per_pair"]) > 0
    assert values["branch"] in ("normal", "swapped")
    assert {"N_xx", "S_oo", "E_zz"} <= values.keys()
    assert digest == loads_config(open(cfg).read()).digest()


def test_evaluate_zero_detector_efficiency(tmp_path):
    cfg = write(tmp_path, "device: {eta_d: 0}\nchannel: {A: {km: 10}, B: {km: 60}}\n" + PARAMS)
    out = tmp_path / "r.csv"
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    values = {r["quantity"]: r["value"] for r in read_csv(out)[1]}
    assert float(values["R_per_pair"]) == 0.0


def test_evaluate_zero_length_lossless(tmp_path):
    cfg = write(tmp_path, "device: {eta_d: 1}\nchannel: {A: {km: 0}, B: {km: 0}}\n" + PARAMS)
    out = tmp_path / "r.csv"
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    values = {r["quantity"]: r["value"] for r in read_csv(out)[1]}
    assert float(values["R_per_pair"]) > 0


def test_evaluate_needs_params(tmp_path, capsys):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\n")
    assert main(["evaluate", "--config", cfg]) == EXIT_CODES["config"]
    assert error_of(capsys)["error"] == "config"


def test_optimize_writes_result_and_trace(tmp_path):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\n" + QUICK + PARAMS)
    out = tmp_path / "best.csv"
    assert main(["optimize", "--config", cfg, "--out", str(out), "--seed", "4"]) == 0
    _, rows = read_csv(out)
    assert len(rows) == 1 and float(rows[0]["R_per_pair"]) > 0
    _, trace = read_csv(tmp_path / "best_trace.csv")
    assert trace[0]["move"] == "start" and trace[-1]["move"] == "terminate"
    vals = [float(r["R_per_pair"]) for r in trace]
    assert vals == sorted(vals)


def test_scan_distance_is_deterministic_and_plots(tmp_path):
    text = "channel: {A: {km: 10}, B: {km: 60}}\n" + QUICK + PARAMS + "scan: {distances: [[10, 60], [5, 5]]}\n"
    cfg = write(tmp_path, text)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["scan-distance", "--config", cfg, "--out", str(a), "--plot"]) == 0
    assert main(["scan-distance", "--config", cfg, "--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    _, rows = read_csv(a)
    assert [(r["L_A_km"], r["L_B_km"]) for r in rows] == [("1.00000e+01", "6.00000e+01"), ("5.00000e+00", "5.00000e+00")]
    png = tmp_path / "a.png"
    assert png.exists() and png.read_bytes()[:4] == b"\x89PNG"
    assert not (tmp_path / "b.png").exists()


def test_scan_distance_empty_list(tmp_path, capsys):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\nscan: {distances: []}\n")
    assert main(["scan-distance", "--config", cfg, "--out", str(tmp_path / "s.csv")]) == EXIT_CODES["config"]
    assert error_of(capsys)["error"] == "config"


def test_compensation_grid_puts_baseline_first():
    cfg = loads_config("schema_version: 1\nchannel: {A: {km: 1}, B: {km: 1}}\n"
                       "scan: {compensation: [[-7, 5], [0, 0], [-8.75, 4.5]]}\n")
    assert compensation_grid(cfg) == [(0.0, 0.0), (-7.0, 5.0), (-8.75, 4.5)]


def test_scan_compensation(tmp_path, capsys):
    text = (
        "channel:\n  db_includes_detector: true\n"
        "  A: {levels: [[5, 0.5], [13, 0.5]]}\n  B: {levels: [[15, 0.5], [23, 0.5]]}\n"
        + QUICK + PARAMS + "scan: {compensation: [[-7, 5]]}\n"
    )
    cfg = write(tmp_path, text)
    out = tmp_path / "g.csv"
    assert main(["scan-compensation", "--config", cfg, "--out", str(out), "--plot"]) == 0
    err = capsys.readouterr().err
    assert "linear threshold" in err and "5.01187" in err
    _, rows = read_csv(out)
    assert [(r["delta_dB"], r["eta_prime_dB"]) for r in rows] == [
        ("0.00000e+00", "0.00000e+00"), ("-7.00000e+00", "5.00000e+00")]
    assert (tmp_path / "g.png").exists()


def test_task_mismatch(tmp_path, capsys):
    cfg = write(tmp_path, "task: optimize\nchannel: {A: {km: 10}, B: {km: 60}}\n" + PARAMS)
    assert main(["evaluate", "--config", cfg]) == EXIT_CODES["config"]
    assert "optimize" in error_of(capsys)["message"]


def test_config_error_reports_line(tmp_path, capsys):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\ndevice:\n  eta_d: 7\n")
    assert main(["evaluate", "--config", cfg]) == EXIT_CODES["config"]
    assert ":4: device.eta_d:" in error_of(capsys)["message"]


@pytest.mark.parametrize(
    "argv,code",
    [
        ([], "usage"),
        (["evaluate"], "usage"),
        (["frobnicate", "--config", "x"], "usage"),
        (["scan-distance", "--config", "x", "--plot"], "usage"),
        (["evaluate", "--config", "x", "--threads", "0"], "usage"),
        (["evaluate", "--config", "/nonexistent/run.yaml"], "io"),
    ],
)
def test_exit_codes(argv, code, capsys):
    assert main(argv) == EXIT_CODES[code]
    assert error_of(capsys)["error"] == code


def test_unwritable_output(tmp_path, capsys):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\n" + PARAMS)
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "no" / "r.csv")]) == EXIT_CODES["io"]


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "channel: {A: {km: 10}, B: {km: 60}}\n" + PARAMS)
    proc = subprocess.run([sys.executable, "-m", "mdiqkd", "evaluate", "--config", cfg],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("# config ")
