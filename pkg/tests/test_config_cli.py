import csv
import json

import pytest

from promptlab.cli import main
from promptlab.config import ENV_OUT, ConfigError, RunConfig, dump_config, from_mapping, load_config, with_overrides
from promptlab.encoder import load_checkpoint

TINY_INI = """
[model]
embed_dim = 16
layers = 2
heads = 2
image_size = 16
vocab_size = 16
max_text_len = 4
n_visual_prompts = 2
n_text_prompts = 2

[data]
n_classes = 4
image_size = 16
shots = 4
n_test = 6
pretrain_per_class = 8

[train]
epochs = 1
lambda = 1.0
gamma = 3.0
mask_threshold = 25
triplet_samples = 8

[pretrain]
max_epochs = 3
target_accuracy = 0.05
heldout_per_class = 4

[run]
seeds = 0
"""


@pytest.fixture
def tiny_ini(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "root"))
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


def rows_without_timing(path):
    with open(path, newline="") as fh:
        return [{k: v for k, v in r.items() if k != "wall_ms"} for r in csv.DictReader(fh)]


def test_defaults_and_round_trip(tmp_path, tiny_ini):
    assert load_config(None) == RunConfig()
    cfg = load_config(tiny_ini)
    assert cfg.model.embed_dim == 16 and cfg.train.lam == 1.0 and cfg.run.seeds == (0,)
    again = tmp_path / "again.ini"
    again.write_text(dump_config(cfg))
    assert load_config(again) == cfg
    assert load_config(again).key == cfg.key


def test_unknown_key_and_section_named():
    with pytest.raises(ConfigError, match="lamda"):
        from_mapping({"train": {"lamda": "1"}})
    with pytest.raises(ConfigError, match="trian"):
        from_mapping({"trian": {}})
    with pytest.raises(ConfigError, match="epochs"):
        from_mapping({"train": {"epochs": "many"}})


def test_negative_lambda_rejected(tmp_path, capsys):
    with pytest.raises(ConfigError, match="lambda"):
        from_mapping({"train": {"lambda": "-1"}})
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlambda = -1\n")
    assert main(["run", "--config", str(bad)]) != 0
    assert "lambda" in capsys.readouterr().err
    assert main(["run", "--lambda", "-1"]) != 0
    assert "lambda" in capsys.readouterr().err


def test_overrides():
    cfg = with_overrides(RunConfig(), seed=4, mask_threshold=10, lam=0.5, gamma=2, no_fif=True, no_hld=True, out="x")
    assert cfg.run.seeds == (4,) and cfg.run.out == "x"
    assert (cfg.train.mask_threshold, cfg.train.lam, cfg.train.gamma) == (10, 0.5, 2)
    assert (cfg.train.fif, cfg.train.stp, cfg.train.hld) == (False, True, False)


def test_output_root_from_environment(tiny_ini, tmp_path):
    cfg = load_config(tiny_ini)
    assert cfg.out_dir() == tmp_path / "root" / f"run-{cfg.key}"
    assert cfg.cache_dir() == tmp_path / "root" / "teachers"


def test_run_smoke_and_determinism(tiny_ini, tmp_path, capsys):
    assert main(["run", "--config", str(tiny_ini), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(tiny_ini), "--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("config.ini", "teacher.json", "prompts-seed0.npz", "losses-seed0.json", "metrics.csv"):
        assert (a / name).is_file()
    rows = rows_without_timing(a / "metrics.csv")
    assert len(rows) == 1
    assert rows == rows_without_timing(b / "metrics.csv")
    # the resolved config reproduces the run
    assert main(["run", "--config", str(a / "config.ini"), "--out", str(tmp_path / "c")]) == 0
    assert rows_without_timing(tmp_path / "c" / "metrics.csv") == rows
    teacher, prompts, meta = load_checkpoint(a / "prompts-seed0.npz")
    assert teacher.frozen and prompts is not None and meta["config_hash"] == rows[0]["config_hash"]
    assert len(json.loads((a / "losses-seed0.json").read_text())) == 1
    assert len(list((tmp_path / "root" / "teachers").glob("teacher-*.npz"))) == 1
    assert "seed 0" in capsys.readouterr().out


def test_run_default_out_dir_and_flags(tiny_ini, tmp_path):
    assert main(["run", "--config", str(tiny_ini), "--seed", "2", "--no-stp", "--no-hld", "--mask-threshold", "10"]) == 0
    cfg = with_overrides(load_config(tiny_ini), seed=2, mask_threshold=10, no_stp=True, no_hld=True)
    rows = rows_without_timing(tmp_path / "root" / f"run-{cfg.key}" / "metrics.csv")
    assert rows[0]["seed"] == "2" and rows[0]["q"] == "10" and (rows[0]["stp"], rows[0]["hld"]) == ("0", "0")


def test_ablate_command(tiny_ini, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_ini), "--grid", "lambda", "--values", "0,1", "--out", str(out)]) == 0
    rows = rows_without_timing(out / "ablation.csv")
    assert [r["lambda"] for r in rows] == ["0", "1"]
    assert len(json.loads((out / "ablation_summary.json").read_text())) == 2
    assert "| setting |" in capsys.readouterr().out


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--scope", "stp", "--seeds", "2"]) == 0
    out = capsys.readouterr().out
    assert "L_vision" in out and "L_ikd" not in out
    assert main(["gradcheck", "--scope", "stp", "--seeds", "1", "--corrupt", "L_text"]) == 1
    assert "failing: L_text" in capsys.readouterr().out
    assert main(["gradcheck", "--scope", "bogus"]) == 2


def test_report_command(tiny_ini, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_ini), "--grid", "q", "--values", "0,25", "--out", str(out)]) == 0
    assert main(["report", str(out / "ablation.csv")]) == 0
    assert (out / "report" / "hm_vs_q.svg").is_file()
    assert main(["report", str(tmp_path / "missing.csv")]) == 2
