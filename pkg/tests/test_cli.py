import shutil
from pathlib import Path

import pytest
import yaml

from latchbench.cli import main

SAMPLE = Path(__file__).resolve().parents[1] / "sample"


@pytest.fixture
def sample_cfg(tmp_path):
    shutil.copy(SAMPLE / "corpus.jsonl", tmp_path / "corpus.jsonl")
    raw = yaml.safe_load((SAMPLE / "synthetic.yaml").read_text())
    raw["n_per_tier"] = 4
    raw["simulate"]["n"] = 200
    path = tmp_path / "synthetic.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_full_pipeline(sample_cfg, capsys):
    cfg = str(sample_cfg)
    assert main(["forge", "build", "--config", cfg]) == 0
    assert main(["--config", cfg, "run"]) == 0
    assert "done 36, error 0" in capsys.readouterr().out
    assert main(["judge", "--config", cfg]) == 0
    assert main(["score", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "model_pair" in out and "hijack" in out
    assert main(["report", "--config", cfg]) == 0
    assert "PI rate" in capsys.readouterr().out
    assert main(["run", "--config", cfg, "--resume"]) == 0
    assert "done 36" in capsys.readouterr().out


def test_simulate_and_ablations(sample_cfg, capsys):
    cfg = str(sample_cfg)
    assert main(["simulate", "--config", cfg, "-n", "100"]) == 0
    assert "predicted=" in capsys.readouterr().out
    assert main(["ablate", "granularity", "--config", cfg, "-n", "3"]) == 0
    out = capsys.readouterr().out
    assert "ssrp:verbose" in out and "ssrp:hyper_compressed" in out
    assert main(["ablate", "equidistant", "--config", cfg, "-n", "3"]) == 0


def test_dry_run_writes_nothing(sample_cfg, capsys):
    assert main(["run", "--config", str(sample_cfg), "--dry-run"]) == 0
    assert "dry run" in capsys.readouterr().out
    assert not (sample_cfg.parent / "runs").exists()


def test_seed_override_before_subcommand(sample_cfg, capsys):
    assert main(["--seed", "5", "--dry-run", "--config", str(sample_cfg), "forge", "build"]) == 0
    assert "(seed 5)" in capsys.readouterr().out


def test_exit_codes(tmp_path, sample_cfg, capsys):
    assert main([]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["report", "--config", str(sample_cfg)]) == 2
    assert main(["run", "--config", str(sample_cfg)]) == 2  # nothing forged yet
    capsys.readouterr()


def test_partial_exit_code(sample_cfg):
    raw = yaml.safe_load(sample_cfg.read_text())
    (sample_cfg.parent / "empty.json").write_text("[]")
    raw["backends"]["fx"] = {"kind": "scripted", "fixture": "empty.json"}
    raw["strategies"]["vanilla"] = {"backend": "fx"}
    sample_cfg.write_text(yaml.safe_dump(raw))
    assert main(["forge", "build", "--config", str(sample_cfg)]) == 0
    assert main(["run", "--config", str(sample_cfg)]) == 1


def test_corrupt_ledger_exit(sample_cfg):
    cfg = str(sample_cfg)
    main(["forge", "build", "--config", cfg])
    main(["run", "--config", cfg])
    ledger = sample_cfg.parent / "runs" / "synthetic-demo" / "ledger.jsonl"
    ledger.write_text("oops\n" + ledger.read_text())
    assert main(["run", "--config", cfg, "--resume"]) == 2


def test_import(tmp_path, capsys):
    src = tmp_path / "mw.json"
    src.write_text('[{"dialogue_id": "X1", "services": ["hotel"], "turns": ['
                   '{"speaker": "USER", "utterance": "cheap hotel"}, {"speaker": "SYSTEM", "utterance": "ok"}]}]')
    assert main(["forge", "import", str(src), str(tmp_path / "c.jsonl")]) == 0
    assert "wrote 1" in capsys.readouterr().out
