import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from pmd.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[model]
kind = conjugate_gaussian

[data]
n = 20
seed = 3
theta = 1

[algorithm]
batch_size = 2
iterations = 8
m = 40

[diagnostics]
grid = -4:4:200

[output]
dir = out
figures = false
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestValidate:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
    def test_bundled_configs(self, name, capsys):
        assert main(["validate", str(CONFIGS / name)]) == 0
        assert capsys.readouterr().out.startswith("ok: ")

    def test_batch_too_large(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(SMALL.replace("batch_size = 2", "batch_size = 50"))
        assert main(["validate", str(path)]) == 2
        err = error_of(capsys)
        assert err["error"] == "ConfigError" and "batch_size" in err["message"]

    def test_missing_config(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.cfg")]) == 2
        assert error_of(capsys)["error"] == "ConfigError"

    def test_bad_dataset(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("x\n1\nabc\n")
        path = tmp_path / "c.cfg"
        path.write_text(SMALL.replace("n = 20", "source = csv\npath = d.csv"))
        assert main(["validate", str(path)]) == 2
        err = error_of(capsys)
        assert err["error"] == "InvalidDataError" and "line 3" in err["message"]


class TestRun:
    def test_default_output_dir_is_relative_to_config(self, small_cfg, capsys):
        assert main(["run", str(small_cfg)]) == 0
        assert (small_cfg.parent / "out" / "trace.jsonl").exists()
        assert "pmd seed=0" in capsys.readouterr().out

    def test_out_flag(self, small_cfg, tmp_path):
        assert main(["run", str(small_cfg), "--out", str(tmp_path / "x")]) == 0
        assert (tmp_path / "x" / "summary.json").exists()

    def test_environment_override(self, small_cfg, tmp_path, monkeypatch):
        monkeypatch.setenv("INFER_OUT_DIR", str(tmp_path / "env"))
        assert main(["run", str(small_cfg)]) == 0
        assert (tmp_path / "env" / "summary.json").exists()
        # an explicit flag still wins
        assert main(["run", str(small_cfg), "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "summary.json").exists()

    def test_repeat_then_summarize(self, small_cfg, tmp_path, capsys):
        out = tmp_path / "rep"
        assert main(["run", str(small_cfg), "--repeat", "3", "--out", str(out), "--workers", "2"]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["seed_0", "seed_1", "seed_2"]
        capsys.readouterr()
        assert main(["summarize", str(out), "--no-figures"]) == 0
        assert capsys.readouterr().out.startswith("pmd (3 seeds): ")
        assert (out / "medians.csv").exists() and not (out / "medians.png").exists()

    def test_summarize_empty_directory(self, tmp_path, capsys):
        assert main(["summarize", str(tmp_path)]) == 2
        assert error_of(capsys)["error"] == "FileNotFoundError"

    def test_runtime_failure_exit_code(self, small_cfg, tmp_path, capsys):
        small_cfg.write_text(SMALL.replace("[algorithm]", "[algorithm]\nname = sgld").replace("iterations = 8", "iterations = 500")
                             + "\n[sgld]\nstep_a = 1e9\nstep_b = 0\nburn_in = 1\n")
        assert main(["run", str(small_cfg), "--out", str(tmp_path / "o")]) == 1
        assert error_of(capsys)["error"] == "FloatingPointError"

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


@pytest.mark.skipif(shutil.which("infer") is None, reason="console script not installed")
def test_console_script(small_cfg, tmp_path):
    proc = subprocess.run(["infer", "run", str(small_cfg), "--out", str(tmp_path / "o")],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(["infer", "validate", str(tmp_path / "missing.cfg")], capture_output=True, text=True)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "ConfigError"


def test_module_entry_point(small_cfg):
    proc = subprocess.run([sys.executable, "-m", "pmd.cli", "validate", str(small_cfg)], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("ok: conjugate_gaussian")
