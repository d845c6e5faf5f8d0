"""End-to-end tests for the command line interface."""

import csv
import json

import pytest

from depthreid.cli import main

TINY_MODEL = (
    "--set", "embedding.conv_channels=4,4,4,4",
    "--set", "embedding.fc_dims=32,256",
    "--set", "embedding.dropout=0.0",
)
TINY_TRAIN = TINY_MODEL + (
    "--set", "train.embedding_epochs=2",
    "--set", "train.batch_size=4",
    "--set", "train.embedding_lr=0.01",
)
TINY_SYNTH = (
    "--set", "synth.n_classes=2",
    "--set", "synth.sequences_per_class=2",
    "--set", "synth.frames_per_sequence=3",
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    out = root / "synth-run"
    code = main(["synth", "--out", str(out), "--data", str(data),
                 *TINY_SYNTH])
    assert code == 0
    return data


def test_usage_errors():
    with pytest.raises(SystemExit) as err:
        main(["defragment"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["synth", "--sideways"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_config_violations_exit_one(tmp_path, capsys):
    code = main(["synth", "--out", str(tmp_path),
                 "--set", "train.window=0"])
    assert code == 1
    assert "window" in capsys.readouterr().err
    code = main(["synth", "--out", str(tmp_path), "--set", "cheese.hole=1"])
    assert code == 1
    assert "cheese" in capsys.readouterr().err


def test_runtime_errors_exit_one(tmp_path, capsys):
    code = main(["train-embedding", "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "out")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")


def test_synth_writes_artifacts(dataset):
    run = dataset.parent / "synth-run"
    assert (run / "config.ini").exists()
    report = json.loads((run / "synth.json").read_text())
    assert report["frames"] == 2 * 2 * 3
    assert len(list(dataset.rglob("frame_*.png"))) == 12


def test_preprocess_then_training_pipeline(dataset, tmp_path):
    pre = tmp_path / "pre"
    assert main(["preprocess", "--data", str(dataset), "--out", str(pre),
                 *TINY_SYNTH]) == 0
    manifest = pre / "manifest.json"
    assert manifest.exists()
    report = json.loads((pre / "preprocess.json").read_text())
    assert report["n_classes"] == 2
    assert report["sequences"]["train"] == 2
    assert report["sequences"]["test"] == 2

    train = tmp_path / "embed"
    assert main(["train-embedding", "--data", str(dataset),
                 "--manifest", str(manifest), "--out", str(train),
                 *TINY_TRAIN]) == 0
    ckpt = train / "embedding.ckpt"
    assert ckpt.exists()
    log_lines = (train / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2
    record = json.loads(log_lines[0])
    assert {"phase", "epoch", "cross_entropy", "base_lr"} <= set(record)

    ev1, ev2 = tmp_path / "eval1", tmp_path / "eval2"
    for out in (ev1, ev2):
        assert main(["evaluate", "--model", str(ckpt),
                     "--data", str(dataset), "--manifest", str(manifest),
                     "--mode", "single_shot", "--out", str(out)]) == 0
    metrics = json.loads((ev1 / "metrics.json").read_text())
    assert 0.0 <= metrics["top1"] <= 1.0
    assert metrics["mode"] == "single_shot"
    assert (ev1 / "metrics.json").read_bytes() == \
        (ev2 / "metrics.json").read_bytes()
    assert (ev1 / "cmc.csv").read_bytes() == (ev2 / "cmc.csv").read_bytes()
    with open(ev1 / "cmc.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "topk"]
    assert len(rows) == 1 + metrics["n_classes"]


def test_sequence_training_and_multishot(dataset, tmp_path):
    pre = tmp_path / "pre"
    assert main(["preprocess", "--data", str(dataset),
                 "--out", str(pre)]) == 0

    embed = tmp_path / "embed"
    assert main(["train-embedding", "--data", str(dataset),
                 "--manifest", str(pre / "manifest.json"),
                 "--out", str(embed), *TINY_TRAIN]) == 0

    seq = tmp_path / "seq"
    assert main(["train-sequence", "--data", str(dataset),
                 "--manifest", str(pre / "manifest.json"),
                 "--init", str(embed / "embedding.ckpt"),
                 "--out", str(seq), *TINY_TRAIN,
                 "--set", "train.sequence_epochs=2",
                 "--set", "train.lr_start=0.005",
                 "--set", "train.lr_end=0.001",
                 "--set", "train.lr_decay_epochs=5",
                 "--set", "train.max_epochs=10"]) == 0
    ckpt = seq / "sequence.ckpt"
    assert ckpt.exists()
    phases = {json.loads(line)["phase"]
              for line in (seq / "train_log.jsonl").read_text().splitlines()}
    assert phases == {"sequence"}

    ev = tmp_path / "eval"
    assert main(["evaluate", "--model", str(ckpt), "--data", str(dataset),
                 "--manifest", str(pre / "manifest.json"),
                 "--mode", "multi_shot", "--out", str(ev)]) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert metrics["mode"] == "multi_shot/attention"
    assert metrics["probes"] == 2

    bad = main(["evaluate", "--model", str(embed / "embedding.ckpt"),
                "--data", str(dataset),
                "--manifest", str(pre / "manifest.json"),
                "--mode", "multi_shot", "--out", str(tmp_path / "bad")])
    assert bad == 1


def test_ablate_writes_expected_rows(dataset, tmp_path):
    embed = tmp_path / "embed"
    assert main(["train-embedding", "--data", str(dataset),
                 "--out", str(embed), *TINY_TRAIN,
                 "--set", "train.embedding_epochs=1"]) == 0

    out = tmp_path / "sweep"
    assert main(["ablate", "--source", str(embed / "embedding.ckpt"),
                 "--data", str(dataset), "--out", str(out),
                 "--k", "0..1", "--treatment", "frozen", "--method", "both",
                 "--set", "transfer.seeds=0", *TINY_TRAIN,
                 "--set", "train.embedding_epochs=1"]) == 0
    with open(out / "ablation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert {(r["method"], r["k"]) for r in rows} == {
        ("split_rate", "0"), ("split_rate", "1"),
        ("baseline", "0"), ("baseline", "1")}


def test_transfer_command(dataset, tmp_path):
    rgb = tmp_path / "rgb-data"
    assert main(["synth", "--data", str(rgb), "--out", str(tmp_path / "s"),
                 *TINY_SYNTH, "--set", "synth.render_mode=rgb"]) == 0
    embed = tmp_path / "embed"
    assert main(["train-embedding", "--data", str(rgb), "--out", str(embed),
                 *TINY_TRAIN, "--set", "train.embedding_epochs=1"]) == 0

    out = tmp_path / "xfer"
    assert main(["transfer", "--source", str(embed / "embedding.ckpt"),
                 "--data", str(dataset), "--out", str(out), *TINY_TRAIN,
                 "--set", "train.embedding_epochs=1"]) == 0
    assert (out / "transferred.ckpt").exists()
    assert (out / "config.ini").exists()


def test_output_env_var(dataset, tmp_path, monkeypatch):
    monkeypatch.setenv("DEPTHREID_OUT", str(tmp_path / "from-env"))
    assert main(["preprocess", "--data", str(dataset)]) == 0
    assert (tmp_path / "from-env" / "preprocess.json").exists()
