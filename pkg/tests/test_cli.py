import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from aplab.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

HARMONIC = {
    "experiment": "minimize", "dim": 2, "gamma": 0.5, "resolution": 32, "source": 0,
    "boundary": [{"kind": "constant", "value": 2.0},
                 {"kind": "power", "center": [-3.0, 0.0], "exponent": 1.0, "amplitude": 0.1}],
    "analysis_oracle": False, "analysis_probe_trials": 20,
}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg) if not isinstance(cfg, str) else cfg)
    return p


def _run(tmp_path, cfg, experiment="minimize", out="out", extra=()):
    return main([experiment, "--config", str(_write(tmp_path, cfg)), "--out", str(tmp_path / out), *extra])


def test_harmonic_minimize_passes(tmp_path):
    assert _run(tmp_path, HARMONIC) == 0
    out = tmp_path / "out"
    report = json.loads((out / "report.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert report["passed"] and report["failed_checks"] == []
    assert manifest["config"]["resolution"] == 32
    assert list(out.glob("*.csv"))


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    assert _run(tmp_path, HARMONIC, out="a") == 0
    monkeypatch.setenv("AP_LAB_THREADS", "4")
    assert _run(tmp_path, HARMONIC, out="b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir() if p.name != "timing.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "timing.json")
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_and_resolution_overrides(tmp_path):
    assert _run(tmp_path, HARMONIC, extra=["--seed", "123", "--resolution", "16"]) == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["seed"] == 123 and manifest["config"]["resolution"] == 16


def test_bad_gamma_is_an_error(tmp_path, capsys):
    code = main(["minimize", "--config", str(CONFIGS / "bad_gamma.json"), "--out", str(tmp_path)])
    assert code == 1
    assert "(0,1)" in capsys.readouterr().err


def test_invalid_json_reports_position(tmp_path, capsys):
    assert _run(tmp_path, '{"experiment": "minimize",\n  "gamma": }') == 1
    assert "cfg.json:2:" in capsys.readouterr().err


@pytest.mark.parametrize("patch,msg", [({"gama": 0.5}, "gama"), ({"resolution": 33}, "resolution"),
                                       ({"dim": 4}, "dim"), ({"experiment": "fb-report"}, "experiment")])
def test_config_errors(tmp_path, capsys, patch, msg):
    assert _run(tmp_path, {**HARMONIC, **patch}) == 1
    assert msg in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["minimize", "--config", str(tmp_path / "none.json")]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_bad_thread_count(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("AP_LAB_THREADS", "zero")
    assert _run(tmp_path, HARMONIC) == 1
    assert "AP_LAB_THREADS" in capsys.readouterr().err


def test_failed_check_exits_two(tmp_path):
    cfg = {"experiment": "lorentz-suite", "dim": 2, "p": 4, "gamma": 0.5, "resolution": 32,
           "lorentz_resolutions": [32, 64], "lorentz_trials": 5, "lorentz_tol": 1e-9}
    assert _run(tmp_path, cfg, experiment="lorentz-suite") == 2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["failed_checks"]


def test_radial_check_passes(tmp_path):
    code = main(["radial-check", "--config", str(CONFIGS / "radial_check.json"), "--out", str(tmp_path)])
    assert code == 0


@pytest.mark.skipif(shutil.which("ap-lab") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = _write(tmp_path, HARMONIC)
    proc = subprocess.run(["ap-lab", "minimize", "--config", str(cfg), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "aplab.cli", "bogus", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 1  # usage errors are errors, not failed checks
