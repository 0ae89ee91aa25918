import subprocess
import sys

import pandas as pd
import pytest

from lcpattern import hmm
from lcpattern.cli import main
from lcpattern.config import OUT_ENV, PipelineConfig
from lcpattern.errors import NumericalError


def test_synth_then_run_from_highd_files(tmp_path, capsys):
    assert main(["synth", "--staged", "--seed", "3", "-o", str(tmp_path / "data")]) == 0
    assert (tmp_path / "data" / "staged_tracks.csv").is_file()
    assert (tmp_path / "data" / "staged_spec.json").is_file()
    out = tmp_path / "out"
    assert main(["run", "--input", str(tmp_path / "data"), "--k", "1", "-o", str(out)]) == 0
    assert len(pd.read_csv(out / "extract" / "events.csv")) == 1
    capsys.readouterr()
    assert main(["run", "--input", str(tmp_path / "data"), "--k", "1", "-o", str(out)]) == 0
    assert capsys.readouterr().out.count("cache hit") == 5
    assert main(["report", str(out)]) == 0
    assert "HIGH-RISK" in capsys.readouterr().out


def test_stage_subcommand_and_saved_config(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    out = tmp_path / "out"
    assert main(["segment", "--synthetic", "staged", "--type-filter", "any", "--k-range", "1-3",
                 "-o", str(out), "--save-config", str(cfg_path)]) == 0
    cfg = PipelineConfig.load(cfg_path)
    assert cfg.type_filter is None and cfg.k_range == [1, 2, 3] and cfg.output_dir == str(out)
    assert (out / "segment" / "primitives.csv").is_file() and not (out / "cluster").exists()
    assert main(["run", "-c", str(cfg_path), "--k", "2", "--k-range", "1,2"]) == 0
    assert len(pd.read_csv(out / "cluster" / "elbow.csv")) == 2


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert main(["ingest", "--synthetic", "staged"]) == 0
    assert (tmp_path / "env_out" / "ingest" / "recordings.csv").is_file()


@pytest.mark.parametrize("argv", [
    ["run", "--k", "1"],                                     # no input source
    ["run", "--synthetic", "staged", "--center", "mean"],     # bad choice
    ["run", "--synthetic", "staged", "--k-range", "a-b"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        code = main(argv)
        raise SystemExit(code)
    assert info.value.code == 1


def test_data_error_exit_2(tmp_path, capsys):
    assert main(["run", "--synthetic", "staged", "--k", "500", "-o", str(tmp_path)]) == 2
    assert "[cluster]" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nope")]) == 2
    assert main(["run", "--input", str(tmp_path / "missing"), "-o", str(tmp_path / "o")]) == 2
    assert main(["run", "-c", str(tmp_path / "missing.cfg")]) == 2


def test_numerical_error_exit_3(tmp_path, monkeypatch, capsys):
    def fail(*a, **k):
        raise NumericalError("covariance is not positive definite")

    monkeypatch.setattr(hmm, "select_model", fail)
    assert main(["run", "--synthetic", "staged", "--k", "1", "-o", str(tmp_path)]) == 3
    assert "[segment]" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lcpattern", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "lcpattern" in res.stdout and "kernels" in res.stdout
