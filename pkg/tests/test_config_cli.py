import numpy as np
import pytest

from semsynth import cli, fixture, pipeline
from semsynth.config import ExperimentConfig
from semsynth.errors import ConfigError


def test_defaults_complete():
    cfg = ExperimentConfig.defaults()
    assert cfg.get("schedule", "t") == 1000
    assert cfg.get("schedule", "kind") == "cosine"
    assert cfg.get("train", "learning_rate") == 1e-4
    assert cfg.get("eval", "iou_min") == 0.5


def test_config_bool_values():
    cfg = ExperimentConfig.defaults()
    assert cfg.get("train", "class_balance") is False
    cfg.set("train", "class_balance", "true")
    assert cfg.get("train", "class_balance") is True
    cfg.set("train", "class_balance", "0")
    assert cfg.get("train", "class_balance") is False
    with pytest.raises(ConfigError):
        cfg.set("train", "class_balance", "maybe")


def test_load_ini(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(
        "[run]\nseed = 7\n\n[schedule]\nt = 50\n\n"
        "[inject]\nrequests = gap-like:3 bridge-like:1\n"
    )
    cfg = ExperimentConfig.load(p)
    assert cfg.get("run", "seed") == 7
    assert cfg.get("schedule", "t") == 50
    assert cfg.get("inject", "requests") == [("gap-like", 3), ("bridge-like", 1)]
    # untouched sections keep defaults
    assert cfg.get("train", "batch_size") == 32


def test_load_rejects_unknown(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[run]\nseed = 1\nturbo = yes\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    p.write_text("[warp]\nspeed = 9\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.ini")


def test_bad_values(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[schedule]\nt = soon\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    cfg = ExperimentConfig.defaults()
    with pytest.raises(ConfigError):
        cfg.set("inject", "requests", "gap-like")


def test_describe_roundtrip():
    text = ExperimentConfig.defaults().describe()
    assert "[schedule]" in text and "t = 1000" in text


def test_cli_exit_code_config(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[warp]\nspeed = 9\n")
    assert cli.main(["--config", str(bad), "fixture-gen"]) == 2
    assert cli.main(["--set", "nonsense", "--dry-run", "fixture-gen"]) == 2
    assert cli.main(["--set", "run.turbo=1", "--dry-run", "fixture-gen"]) == 2


def test_cli_exit_code_precondition(tmp_path):
    # export with no inputs at all is a precondition failure
    rc = cli.main(["--out-dir", str(tmp_path / "o"), "export", "--mixing", "real-only"])
    assert rc == 3


def test_cli_exit_code_runtime(tmp_path):
    rc = cli.main(
        ["--out-dir", str(tmp_path / "o"), "metrology", "--image", str(tmp_path / "no.png")]
    )
    assert rc == 1


def test_cli_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "dry"
    rc = cli.main(["--out-dir", str(out), "--dry-run", "fixture-gen"])
    assert rc == 0
    assert not out.exists()
    captured = capsys.readouterr().out
    assert "plan: fixture-gen" in captured
    assert "[run]" in captured


def test_cli_set_override(tmp_path, capsys):
    rc = cli.main(["--dry-run", "--set", "run.seed=99", "fixture-gen"])
    assert rc == 0
    assert "seed = 99" in capsys.readouterr().out


def small_cfg(seed=0):
    cfg = ExperimentConfig.defaults()
    cfg.values["run"]["seed"] = seed
    cfg.values["fixture"]["contexts"] = ["ls-p16"]
    cfg.values["fixture"]["images_per_context"] = 2
    cfg.values["fixture"]["canvas"] = 128
    return cfg


def test_stage_fixture_gen_layout(tmp_path):
    out = pipeline.stage_fixture_gen(small_cfg(), tmp_path / "c")
    images = sorted((out / "images").glob("*.png"))
    assert len(images) == 2
    assert (out / "vocab.txt").exists()
    for img in images:
        assert (out / "labels" / f"{img.stem}.txt").exists()
        assert (out / "truth" / f"{img.stem}.txt").exists()
    corpus, vocab = pipeline.load_corpus(out)
    assert len(corpus) == 2
    assert corpus[0].context == "ls-p16"
    assert all(len(c.annotations) == 4 for c in corpus)


def test_stage_patchset_roundtrip(tmp_path):
    cfg = small_cfg()
    cfg.values["patchset"]["patch_size"] = 32
    corpus_dir = pipeline.stage_fixture_gen(cfg, tmp_path / "c")
    patch_dir = pipeline.stage_patchset_build(cfg, corpus_dir, tmp_path / "p")
    ds, vocab = pipeline.load_patch_dataset(patch_dir)
    assert len(ds) > 0
    assert ds.patch_size == 32
    counts = (patch_dir / "counts.txt").read_text()
    assert "background:" in counts


def test_stage_metrology(tmp_path):
    cfg = small_cfg()
    corpus_dir = pipeline.stage_fixture_gen(cfg, tmp_path / "c")
    img = sorted((corpus_dir / "images").glob("*.png"))[0]
    report = pipeline.stage_metrology(img, tmp_path / "m", ref_path=img)
    assert "cd_mean:" in report.read_text()
    compare = (tmp_path / "m" / "compare.txt").read_text()
    assert "overall: pass" in compare


def test_stage_pseudo_label_and_evaluate(tmp_path):
    cfg = small_cfg()
    corpus_dir = pipeline.stage_fixture_gen(cfg, tmp_path / "c")
    vocab = pipeline.load_corpus(corpus_dir)[1]
    pseudo = pipeline.stage_pseudo_label(
        cfg, corpus_dir / "images", vocab, tmp_path / "pl"
    )
    assert (pseudo / "audit.txt").exists()
    preds = sorted((pseudo / "preds").glob("*.txt"))
    assert len(preds) == 2
    result = pipeline.stage_evaluate(
        cfg, pseudo / "preds", corpus_dir / "labels", vocab, tmp_path / "e"
    )
    assert 0.0 <= result.map <= 1.0
    assert (tmp_path / "e" / "eval.csv").read_text().startswith("class,ap,ar")
