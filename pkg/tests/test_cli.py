import csv
import os

import numpy as np
import pytest

from sparsemamba.cli import main
from sparsemamba.config import ExperimentConfig


# -- config file format ----------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(widths=(4, 8), lam=0.25, use_pcl=True, max_iter=7,
                           out_dir="runs/x")
    path = str(tmp_path / "cfg.txt")
    cfg.to_file(path)
    back = ExperimentConfig.from_file(path)
    assert back == cfg


def test_config_comments_and_overrides(tmp_path):
    path = str(tmp_path / "cfg.txt")
    with open(path, "w") as fh:
        fh.write("# a comment\nlam = 0.5\nmax_iter = 10  # trailing comment\n")
    cfg = ExperimentConfig.from_file(path, overrides={"max_iter": "5"})
    assert cfg.lam == 0.5
    assert cfg.max_iter == 5


def test_config_unknown_key_rejected(tmp_path):
    path = str(tmp_path / "cfg.txt")
    with open(path, "w") as fh:
        fh.write("learning_rate = 0.1\n")
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_file(path)


def test_config_validation_errors():
    with pytest.raises(ValueError):
        ExperimentConfig(lr=-1).validate()
    with pytest.raises(ValueError):
        ExperimentConfig(lam=2.0).validate()
    with pytest.raises(ValueError):
        ExperimentConfig(image_size=30).validate()
    with pytest.raises(ValueError):
        ExperimentConfig(guide="medsam").validate()
    with pytest.raises(ValueError):
        ExperimentConfig(dataset_path="/does/not/exist").validate()


# -- subcommands -----------------------------------------------------------------


def test_synth_writes_dataset(tmp_path, capsys):
    out = str(tmp_path / "ds")
    assert main(["synth", "--out", out, "--seed", "1", "--cases", "3",
                 "--size", "32", "--classes", "2"]) == 0
    assert sorted(os.listdir(out)) == ["dataset.txt", "images", "labels", "scribbles"]
    assert len(os.listdir(os.path.join(out, "images"))) == 3


def test_spobe_command_outputs(tmp_path):
    ds = str(tmp_path / "ds")
    main(["synth", "--out", ds, "--cases", "1", "--size", "32", "--classes", "2"])
    out_dir = str(tmp_path / "spobe")
    code = main(["spobe",
                 "--image", os.path.join(ds, "images", "case0000.png"),
                 "--scribbles", os.path.join(ds, "scribbles", "case0000.png"),
                 "--classes", "2", "--out-dir", out_dir])
    assert code == 0
    produced = set(os.listdir(out_dir))
    assert "enriched_scribbles.png" in produced
    assert "overlay.png" in produced
    assert any(name.endswith(".pgm") for name in produced)


def test_spobe_size_mismatch_exit_code(tmp_path):
    ds = str(tmp_path / "ds")
    main(["synth", "--out", ds, "--cases", "1", "--size", "32", "--classes", "2"])
    small = str(tmp_path / "small")
    main(["synth", "--out", small, "--cases", "1", "--size", "16", "--classes", "2"])
    code = main(["spobe",
                 "--image", os.path.join(ds, "images", "case0000.png"),
                 "--scribbles", os.path.join(small, "scribbles", "case0000.png"),
                 "--classes", "2", "--out-dir", str(tmp_path / "x")])
    assert code == 1


def test_train_eval_pipeline(tmp_path):
    ds = str(tmp_path / "ds")
    main(["synth", "--out", ds, "--cases", "6", "--size", "16", "--classes", "2"])
    cfg = ExperimentConfig(widths=(4, 8), image_size=16, batch_size=2, max_iter=2,
                           eval_interval=1, dataset_path=ds, num_classes=2,
                           out_dir=str(tmp_path / "run"))
    cfg_path = str(tmp_path / "cfg.txt")
    cfg.to_file(cfg_path)
    assert main(["train", "--config", cfg_path]) == 0
    metrics = str(tmp_path / "metrics.csv")
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.bin"),
                 "--dataset", ds, "--out", metrics]) == 0
    with open(metrics) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["case_id", "class", "dice", "hd95_mm", "flags"]
    assert rows[-1][0] == "mean"
    assert len(rows) == 2 + 6  # header + one row per (case, class) + mean


def test_train_bad_config_exit_code(tmp_path):
    cfg_path = str(tmp_path / "cfg.txt")
    with open(cfg_path, "w") as fh:
        fh.write("lr = -3\n")
    assert main(["train", "--config", cfg_path]) == 1
    with open(cfg_path, "w") as fh:
        fh.write("no_such_key = 1\n")
    assert main(["train", "--config", cfg_path]) == 1


def test_train_env_seed_override(tmp_path, monkeypatch):
    cfg = ExperimentConfig(widths=(4, 8), image_size=16, synth_train=2, synth_val=1,
                           batch_size=1, max_iter=1, out_dir=str(tmp_path / "r1"))
    cfg_path = str(tmp_path / "cfg.txt")
    cfg.to_file(cfg_path)
    monkeypatch.setenv("SPARSEMAMBA_SEED", "7")
    assert main(["train", "--config", cfg_path]) == 0
    from sparsemamba.network import load_checkpoint
    _, params_env = load_checkpoint(str(tmp_path / "r1" / "checkpoint.bin"))
    monkeypatch.delenv("SPARSEMAMBA_SEED")
    cfg.seed = 7
    cfg.out_dir = str(tmp_path / "r2")
    cfg.to_file(cfg_path)
    assert main(["train", "--config", cfg_path]) == 0
    _, params_direct = load_checkpoint(str(tmp_path / "r2" / "checkpoint.bin"))
    for name in params_env:
        assert np.array_equal(params_env[name], params_direct[name])


def test_scan_bench_counts(tmp_path):
    out = str(tmp_path / "bench.csv")
    assert main(["scan-bench", "--height", "16", "--width", "16",
                 "--repeats", "1", "--out", out]) == 0
    with open(out) as fh:
        rows = {r["kind"]: r for r in csv.DictReader(fh)}
    assert int(rows["dense"]["total_indices"]) == 4 * 16 * 16
    assert int(rows["sparse"]["total_indices"]) == 16 * 16
    assert float(rows["dense"]["elements_per_sec"]) > 0


def test_eval_missing_checkpoint_exit_code(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                 "--dataset", str(tmp_path), "--out", str(tmp_path / "m.csv")]) == 1
