"""Tests for configuration resolution."""

import pytest

from depthreid.config import DEFAULTS, ConfigError, load_config


def test_defaults_resolve():
    cfg = load_config()
    assert cfg.get("train", "seed") == "0"
    assert cfg.getint("train", "batch_size") == 50
    assert cfg.getfloat("train", "lr_start") == 0.01
    assert cfg.getbool("train", "staged") is True
    assert cfg.getints("embedding", "conv_channels") == (8, 16, 24, 32)
    assert set(cfg.values) == set(DEFAULTS)


def test_file_and_overrides_layer(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[train]\nseed = 5\nbatch_size = 10\n")
    cfg = load_config(ini)
    assert cfg.getint("train", "seed") == 5
    assert cfg.getint("train", "batch_size") == 10
    assert cfg.getint("train", "window") == 3

    cfg = load_config(ini, overrides=("train.seed=9", "synth.n_classes=4"))
    assert cfg.getint("train", "seed") == 9
    assert cfg.getint("synth", "n_classes") == 4


def test_unknown_entries_rejected(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[train]\nwarp_speed = 9\n")
    with pytest.raises(ConfigError, match="train.warp_speed"):
        load_config(ini)
    ini.write_text("[plasma]\nseed = 1\n")
    with pytest.raises(ConfigError, match="plasma"):
        load_config(ini)
    ini.write_text("not an ini file at all [")
    with pytest.raises(ConfigError, match="parse"):
        load_config(ini)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")

    with pytest.raises(ConfigError, match="section.key=value"):
        load_config(overrides=("seed=1",))
    with pytest.raises(ConfigError, match="train.warp"):
        load_config(overrides=("train.warp=1",))


def test_typed_accessors_name_the_key():
    cfg = load_config(overrides=("train.seed=fast",))
    with pytest.raises(ConfigError, match="train.seed"):
        cfg.getint("train", "seed")
    cfg = load_config(overrides=("train.lr_start=hot",))
    with pytest.raises(ConfigError, match="train.lr_start"):
        cfg.getfloat("train", "lr_start")
    cfg = load_config(overrides=("train.staged=maybe",))
    with pytest.raises(ConfigError, match="train.staged"):
        cfg.getbool("train", "staged")
    cfg = load_config(overrides=("embedding.conv_channels=8;16",))
    with pytest.raises(ConfigError, match="conv_channels"):
        cfg.getints("embedding", "conv_channels")


def test_builds_component_configs():
    cfg = load_config(overrides=(
        "embedding.conv_channels=4,4,4,4", "embedding.fc_dims=32,256",
        "embedding.dropout=0.0", "train.window=4",
        "synth.n_classes=3"))
    assert cfg.embedding_config().conv_channels == (4, 4, 4, 4)
    assert cfg.train_config().window == 4
    assert cfg.synth_config().n_classes == 3

    bad = load_config(overrides=("train.window=0",))
    with pytest.raises(ConfigError, match="window"):
        bad.train_config()
    bad = load_config(overrides=("synth.render_mode=voxel",))
    with pytest.raises(ConfigError, match="render"):
        bad.synth_config()


def test_validate_covers_every_section():
    assert load_config().validate() is not None
    violations = (
        (("train.window=0",), "window"),
        (("train.test_fraction=1.5",), "test_fraction"),
        (("train.test_fraction=0.6", "train.val_fraction=0.5"), "sum below 1"),
        (("transfer.k_frozen=-1",), "k_frozen"),
        (("transfer.slow_multiplier=1.0",), "slow_multiplier"),
        (("transfer.treatment=melted",), "treatment"),
        (("transfer.method=osmosis",), "method"),
        (("transfer.k_range=1,-2",), "k_range"),
        (("transfer.seeds=a,b",), "seeds"),
        (("eval.mode=triple_shot",), "mode"),
        (("eval.fusion=median",), "fusion"),
        (("eval.split=rehearsal",), "split"),
        (("synth.render_mode=voxel",), "render"),
    )
    for overrides, key in violations:
        cfg = load_config(overrides=overrides)
        with pytest.raises(ConfigError, match=key):
            cfg.validate()


def test_snapshot_round_trip(tmp_path):
    cfg = load_config(overrides=("train.seed=11", "eval.mode=multi_shot"))
    path = cfg.snapshot(tmp_path / "config.ini")
    again = load_config(path)
    assert again.values == cfg.values
    path2 = again.snapshot(tmp_path / "config2.ini")
    assert path.read_bytes() == path2.read_bytes()
