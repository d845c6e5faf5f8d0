"""Run configuration: INI sections, overrides and resolved snapshots.

Configuration is a flat key-value file with five sections (embedding,
train, transfer, eval, synth). Every key has a default, a config file
replaces defaults, and command-line overrides of the form
``section.key=value`` win over both. Values stay strings until a typed
accessor parses them, so the resolved snapshot written next to a run's
artifacts reproduces exactly what the run saw.
"""

import configparser
from pathlib import Path

from .data import SPLITS
from .embedding import EmbeddingConfig
from .synth import SyntheticConfig
from .training import TrainConfig
from .transfer import METHODS, TREATMENTS

DEFAULTS = {
    "embedding": {
        "conv_channels": "8,16,24,32",
        "fc_dims": "256,256,256",
        "dropout": "0.4",
    },
    "train": {
        "embedding_lr": "0.0003",
        "embedding_momentum": "0.5",
        "embedding_epochs": "20",
        "lr_start": "0.01",
        "lr_end": "0.0001",
        "lr_decay_epochs": "200",
        "max_epochs": "250",
        "sequence_epochs": "250",
        "sequence_momentum": "0.9",
        "weight_decay": "0.0002",
        "batch_size": "50",
        "window": "3",
        "lambda_reinforce": "1.0",
        "baseline_lr": "0.1",
        "reward_posterior": "fused",
        "staged": "true",
        "seed": "0",
        "test_fraction": "0.5",
        "val_fraction": "0.0",
    },
    "transfer": {
        "k_frozen": "3",
        "slow_multiplier": "0.1",
        "treatment": "frozen",
        "method": "split_rate",
        "k_range": "0,1,2,3",
        "seeds": "0,1,2,3,4",
    },
    "eval": {
        "mode": "single_shot",
        "fusion": "attention",
        "split": "test",
    },
    "synth": {
        "n_classes": "8",
        "sequences_per_class": "10",
        "frames_per_sequence": "12",
        "noise_mm": "12.0",
        "corruption_probability": "0.3",
        "render_mode": "depth",
    },
}

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


class ConfigError(ValueError):
    """A config value violation; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class RunConfig:
    """Resolved string-valued configuration with typed accessors."""

    def __init__(self, values):
        self.values = values

    def get(self, section, key):
        return self.values[section][key]

    def getint(self, section, key):
        raw = self.get(section, key)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}",
                              f"expected an integer, got {raw!r}") from None

    def getfloat(self, section, key):
        raw = self.get(section, key)
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}",
                              f"expected a number, got {raw!r}") from None

    def getbool(self, section, key):
        raw = self.get(section, key).lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(f"{section}.{key}",
                          f"expected a boolean, got {raw!r}")

    def getints(self, section, key):
        raw = self.get(section, key)
        try:
            return tuple(int(part) for part in raw.split(",") if part.strip())
        except ValueError:
            raise ConfigError(
                f"{section}.{key}",
                f"expected comma-separated integers, got {raw!r}") from None

    def _wrap(self, section, build):
        try:
            return build()
        except ValueError as exc:
            raise ConfigError(section, str(exc)) from None

    def embedding_config(self):
        return self._wrap("embedding", lambda: EmbeddingConfig(
            conv_channels=self.getints("embedding", "conv_channels"),
            fc_dims=self.getints("embedding", "fc_dims"),
            dropout=self.getfloat("embedding", "dropout"),
        ))

    def train_config(self):
        return self._wrap("train", lambda: TrainConfig(
            embedding_lr=self.getfloat("train", "embedding_lr"),
            embedding_momentum=self.getfloat("train", "embedding_momentum"),
            embedding_epochs=self.getint("train", "embedding_epochs"),
            lr_start=self.getfloat("train", "lr_start"),
            lr_end=self.getfloat("train", "lr_end"),
            lr_decay_epochs=self.getint("train", "lr_decay_epochs"),
            max_epochs=self.getint("train", "max_epochs"),
            sequence_epochs=self.getint("train", "sequence_epochs"),
            sequence_momentum=self.getfloat("train", "sequence_momentum"),
            weight_decay=self.getfloat("train", "weight_decay"),
            batch_size=self.getint("train", "batch_size"),
            window=self.getint("train", "window"),
            lambda_reinforce=self.getfloat("train", "lambda_reinforce"),
            baseline_lr=self.getfloat("train", "baseline_lr"),
            reward_posterior=self.get("train", "reward_posterior"),
            staged=self.getbool("train", "staged"),
            seed=self.getint("train", "seed"),
        ))

    def synth_config(self):
        return self._wrap("synth", lambda: SyntheticConfig(
            n_classes=self.getint("synth", "n_classes"),
            sequences_per_class=self.getint("synth", "sequences_per_class"),
            frames_per_sequence=self.getint("synth", "frames_per_sequence"),
            noise_mm=self.getfloat("synth", "noise_mm"),
            corruption_probability=self.getfloat(
                "synth", "corruption_probability"),
            render_mode=self.get("synth", "render_mode"),
        ))

    def validate(self):
        """Parse every key once so violations surface before any work.

        Typed accessors are lazy, so a bad value in a section a command
        never reads would otherwise go unnoticed. Raises ConfigError
        naming the first offending key.
        """
        self.embedding_config()
        self.train_config()
        self.synth_config()
        for key in ("test_fraction", "val_fraction"):
            value = self.getfloat("train", key)
            if not 0 <= value < 1:
                raise ConfigError(f"train.{key}",
                                  f"must lie in [0, 1), got {value}")
        total = (self.getfloat("train", "test_fraction")
                 + self.getfloat("train", "val_fraction"))
        if total >= 1:
            raise ConfigError("train.test_fraction",
                              f"splits must sum below 1, got {total}")
        if self.getint("transfer", "k_frozen") < 0:
            raise ConfigError("transfer.k_frozen", "must be nonnegative")
        slow = self.getfloat("transfer", "slow_multiplier")
        if not 0 < slow < 1:
            raise ConfigError("transfer.slow_multiplier",
                              f"must lie in (0, 1), got {slow}")
        if any(k < 0 for k in self.getints("transfer", "k_range")):
            raise ConfigError("transfer.k_range", "entries must be nonnegative")
        self.getints("transfer", "seeds")
        choices = (
            ("transfer", "treatment", TREATMENTS),
            ("transfer", "method", METHODS),
            ("eval", "mode", ("single_shot", "multi_shot")),
            ("eval", "fusion", ("attention", "uniform")),
            ("eval", "split", SPLITS),
        )
        for section, key, allowed in choices:
            value = self.get(section, key)
            if value not in allowed:
                raise ConfigError(
                    f"{section}.{key}",
                    f"must be one of {', '.join(allowed)}, got {value!r}")
        return self

    def snapshot(self, path):
        """Write the resolved configuration as an INI file."""
        parser = configparser.ConfigParser()
        for section in DEFAULTS:
            parser[section] = dict(self.values[section])
        path = Path(path)
        with open(path, "w") as fh:
            parser.write(fh)
        return path


def _check_known(section, key, where):
    if section not in DEFAULTS:
        raise ConfigError(section, f"unknown section (in {where})")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"{section}.{key}", f"unknown key (in {where})")


def load_config(path=None, overrides=()):
    """Resolve defaults, an optional INI file and dotted overrides."""
    values = {section: dict(keys) for section, keys in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from None
        for section in parser.sections():
            for key, value in parser[section].items():
                _check_known(section, key, str(path))
                values[section][key] = value
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(
                "override", f"expected section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _check_known(section, key, "command line")
        values[section][key] = value
    return RunConfig(values)
