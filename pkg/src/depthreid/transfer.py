"""Checkpoints and cross-modality transfer with per-group learning rates.

A checkpoint is a single file: 4 magic bytes, a little-endian uint32
format version, a little-endian uint32 header length, a UTF-8 JSON
header, then the raw tensor payloads. The header records the embedding
architecture and its hash, the class count, standardization constants,
a free-form provenance string, and a manifest of (name, shape, offset)
for every tensor. Payloads are C-order float64, little-endian, at the
manifest offsets relative to the end of the header. Round-trips are
bit-identical.

Transfer plans assign one directive per parameter group, bottom to top:
copied groups take the source values bit-exactly and train at the
directive's rate (0 for frozen, a fraction for slow, 1 for fast), while
reinitialized groups draw fresh values. The default plan freezes the
bottom three groups, copies the rest at full rate and reinitializes the
classifier head, which is what worked best when moving a model trained
on rendered color frames over to depth.
"""

import csv
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import EmbeddingConfig, FrameEmbedding
from .metrics import evaluate_single_shot
from .nn import RngStream
from .sequence import SequenceModel
from .training import train_embedding

CHECKPOINT_MAGIC = b"DRCK"
CHECKPOINT_VERSION = 1
SLOW_MULTIPLIER = 0.1
ACTIONS = ("copy_frozen", "copy_slow", "copy_fast", "reinit")
TREATMENTS = ("frozen", "fine_tuned")
METHODS = ("split_rate", "baseline")
SWEEP_COLUMNS = ("method", "treatment", "k", "seed", "top1")

_DEFAULT_MULTIPLIERS = {
    "copy_frozen": 0.0,
    "copy_slow": SLOW_MULTIPLIER,
    "copy_fast": 1.0,
    "reinit": 1.0,
}


def config_digest(config):
    """Stable hex digest of an embedding architecture."""
    blob = json.dumps(
        {
            "conv_channels": list(config.conv_channels),
            "fc_dims": list(config.fc_dims),
            "dropout": config.dropout,
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class Directive:
    """One per-group instruction: where values come from and how fast
    they train afterwards."""

    group: str
    action: str
    multiplier: float = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown directive action {self.action!r}")
        m = self.multiplier
        if m is None:
            m = _DEFAULT_MULTIPLIERS[self.action]
        m = float(m)
        if self.action == "copy_frozen" and m != 0.0:
            raise ValueError("frozen groups must use multiplier 0")
        if self.action == "copy_slow" and not 0.0 < m < 1.0:
            raise ValueError("slow groups need a multiplier in (0, 1)")
        if self.action == "copy_fast" and m != 1.0:
            raise ValueError("fast groups train at multiplier 1")
        if self.action == "reinit" and m < 1.0:
            raise ValueError("reinitialized groups train at multiplier >= 1")
        object.__setattr__(self, "multiplier", m)

    @property
    def copies(self):
        return self.action.startswith("copy_")


@dataclass(frozen=True)
class TransferPlan:
    """Ordered directives, one per parameter group, bottom to top."""

    directives: tuple

    def __post_init__(self):
        object.__setattr__(self, "directives", tuple(self.directives))
        names = [d.group for d in self.directives]
        if len(set(names)) != len(names):
            raise ValueError("plan names a group more than once")

    def groups(self):
        return tuple(d.group for d in self.directives)

    def check_covers(self, group_names):
        """The plan must name every model group exactly once, in model
        order (bottom to top)."""
        expected = tuple(group_names)
        if self.groups() != expected:
            missing = set(expected) - set(self.groups())
            unknown = set(self.groups()) - set(expected)
            if missing:
                raise ValueError(f"plan is missing groups {sorted(missing)}")
            if unknown:
                raise ValueError(f"plan names unknown groups {sorted(unknown)}")
            raise ValueError(
                f"plan order {self.groups()} != model order {expected}")


def sweep_plan(group_names, k, treatment="frozen", method="split_rate",
               slow_multiplier=SLOW_MULTIPLIER, top_multiplier=1.0):
    """Build the plan for one ablation point.

    The bottom ``k`` feature groups are copied and either frozen or
    slowly tuned, per ``treatment``. Above them, ``split_rate`` copies
    the remaining feature groups and trains them at full rate, while
    ``baseline`` reinitializes them (the classic transfer recipe). The
    classifier head is always reinitialized. At k = 0 the treatment is
    vacuous, so both treatments build the identical plan.
    """
    group_names = tuple(group_names)
    if not group_names or group_names[-1] != "head":
        raise ValueError("expected the classifier head as the top group")
    if treatment not in TREATMENTS:
        raise ValueError(f"treatment must be one of {TREATMENTS}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    feature_groups = group_names[:-1]
    if not 0 <= k <= len(feature_groups):
        raise ValueError(
            f"k must lie in [0, {len(feature_groups)}], got {k}")
    if treatment == "frozen":
        bottom = [Directive(name, "copy_frozen")
                  for name in feature_groups[:k]]
    else:
        bottom = [Directive(name, "copy_slow", slow_multiplier)
                  for name in feature_groups[:k]]
    if method == "split_rate":
        top = [Directive(name, "copy_fast") for name in feature_groups[k:]]
    else:
        top = [Directive(name, "reinit", top_multiplier)
               for name in feature_groups[k:]]
    head = Directive("head", "reinit", top_multiplier)
    return TransferPlan(tuple(bottom + top + [head]))


def default_split_rate_plan(group_names):
    """Bottom three groups frozen, the rest copied at full rate, head
    reinitialized."""
    return sweep_plan(group_names, 3, "frozen", "split_rate")


# ---------------------------------------------------------------------------
# checkpoint file format


def _model_tensors(model):
    if isinstance(model, SequenceModel):
        params = model.embedding.params() + model.temporal_params()
        return "sequence", model.embedding, params
    if isinstance(model, FrameEmbedding):
        return "embedding", model, model.params()
    raise TypeError(f"cannot checkpoint a {type(model).__name__}")


def save_checkpoint(model, path, provenance=""):
    """Write ``model`` to ``path``. Returns the path."""
    kind, embedding, params = _model_tensors(model)
    records = []
    offset = 0
    payloads = []
    for p in params:
        arr = np.ascontiguousarray(p.value, dtype=np.float64)
        records.append(
            {"name": p.name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.astype("<f8", copy=False).tobytes())
        offset += arr.size * 8
    header = {
        "kind": kind,
        "embedding": {
            "conv_channels": list(embedding.config.conv_channels),
            "fc_dims": list(embedding.config.fc_dims),
            "dropout": embedding.config.dropout,
        },
        "config_hash": config_digest(embedding.config),
        "n_classes": model.n_classes,
        "embedding_classes": embedding.n_classes,
        "standardization": {
            "mean": embedding.standardize_mean,
            "scale": embedding.standardize_scale,
        },
        "provenance": str(provenance),
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)
    return path


@dataclass(frozen=True)
class Checkpoint:
    """A parsed checkpoint: architecture, constants and named tensors."""

    kind: str
    config: EmbeddingConfig
    config_hash: str
    n_classes: int
    embedding_classes: int
    standardize_mean: float
    standardize_scale: float
    provenance: str
    tensors: dict = field(repr=False)


def read_checkpoint(path):
    """Parse and verify a checkpoint file."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    if len(raw) < 12 + header_len:
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt header ({exc})") from exc
    config = EmbeddingConfig(
        conv_channels=tuple(header["embedding"]["conv_channels"]),
        fc_dims=tuple(header["embedding"]["fc_dims"]),
        dropout=header["embedding"]["dropout"],
    )
    if config_digest(config) != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    payload = raw[12 + header_len:]
    tensors = {}
    expected_end = 0
    for rec in header["tensors"]:
        shape = tuple(rec["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 8
        start = rec["offset"]
        if start + size > len(payload):
            raise ValueError(
                f"{path}: truncated payload for tensor {rec['name']!r}")
        flat = np.frombuffer(payload[start:start + size], dtype="<f8")
        tensors[rec["name"]] = flat.reshape(shape).astype(np.float64)
        expected_end = max(expected_end, start + size)
    if expected_end != len(payload):
        raise ValueError(f"{path}: payload size does not match manifest")
    return Checkpoint(
        kind=header["kind"],
        config=config,
        config_hash=header["config_hash"],
        n_classes=header["n_classes"],
        embedding_classes=header["embedding_classes"],
        standardize_mean=header["standardization"]["mean"],
        standardize_scale=header["standardization"]["scale"],
        provenance=header["provenance"],
        tensors=tensors,
    )


def _restore_exact(model, checkpoint, path):
    _, embedding, params = _model_tensors(model)
    if embedding.standardize_mean != checkpoint.standardize_mean \
            or embedding.standardize_scale != checkpoint.standardize_scale:
        raise ValueError(f"{path}: standardization constants changed")
    for p in params:
        stored = checkpoint.tensors.get(p.name)
        if stored is None:
            raise ValueError(f"{path}: tensor {p.name!r} missing")
        if stored.shape != p.value.shape:
            raise ValueError(
                f"{path}: tensor {p.name!r} has shape {stored.shape}, "
                f"model expects {p.value.shape}")
        p.value[...] = stored
        p.version += 1
    extra = set(checkpoint.tensors) - {p.name for p in params}
    if extra:
        raise ValueError(f"{path}: unexpected tensors {sorted(extra)}")
    return model


def load_checkpoint(path, rng=None, n_classes=None, plan=None):
    """Rebuild the saved model.

    Without a plan the stored tensors are restored bit-exactly, and any
    requested ``n_classes`` must match the stored head. With a plan the
    checkpoint acts as a transfer source: a fresh model is built for
    ``n_classes`` (``rng`` required) and the plan decides, per group,
    what is copied and at which rate it will train.
    """
    ckpt = read_checkpoint(path)
    if plan is None:
        if rng is None:
            rng = RngStream(0)
        model = FrameEmbedding(ckpt.config, rng)
        if ckpt.embedding_classes is not None:
            model.adapt_head(ckpt.embedding_classes, rng)
        if n_classes is not None and n_classes != ckpt.n_classes:
            raise ValueError(
                f"{path}: tensor 'head.weight' was trained for "
                f"{ckpt.n_classes} classes, not {n_classes}; "
                "pass a transfer plan to adapt it")
        if ckpt.kind == "sequence":
            model = SequenceModel(model, ckpt.n_classes, rng)
        return _restore_exact(model, ckpt, path)
    if ckpt.kind != "embedding":
        raise ValueError(
            f"{path}: transfer plans apply to frame embeddings only")
    if rng is None:
        raise ValueError("transfer needs an rng for fresh parameter draws")
    if n_classes is None:
        n_classes = ckpt.n_classes
    model = FrameEmbedding(ckpt.config, rng.child("init"))
    if n_classes is not None:
        model.adapt_head(n_classes, rng.child("head"))
    return apply_transfer_plan(ckpt, model, plan, rng.child("transfer"))


def apply_transfer_plan(source, target, plan, rng):
    """Initialize ``target`` from ``source`` per the plan.

    Copy directives require matching shapes and copy bit-exactly;
    reinit directives draw fresh values. Every group's learning-rate
    multiplier is set from its directive, so later training realizes
    the plan without further bookkeeping.
    """
    if not isinstance(target, FrameEmbedding):
        raise TypeError("transfer targets are frame embeddings")
    plan.check_covers(target.group_names())
    fresh = None
    by_name = dict(target.groups())
    for directive in plan.directives:
        params = by_name[directive.group]
        if directive.copies:
            for p in params:
                stored = source.tensors.get(p.name)
                if stored is None:
                    raise ValueError(
                        f"cannot copy tensor {p.name!r}: not in the source")
                if stored.shape != p.value.shape:
                    raise ValueError(
                        f"cannot copy tensor {p.name!r}: source shape "
                        f"{stored.shape} != target shape {p.value.shape}")
                p.value[...] = stored
                p.version += 1
        else:
            if fresh is None:
                fresh = FrameEmbedding(target.config, rng)
                if target.head is not None:
                    fresh.adapt_head(target.n_classes, rng)
            for p, new in zip(params, dict(fresh.groups())[directive.group]):
                p.value[...] = new.value
                p.version += 1
        for p in params:
            p.lr_multiplier = directive.multiplier
    return target


# ---------------------------------------------------------------------------
# ablation sweep


def ablation_sweep(source, train_store, eval_store, k_range, config,
                   treatments=TREATMENTS, methods=METHODS, seeds=(0,),
                   log=None):
    """Top-1 accuracy per transfer recipe, over depths, seeds and both
    bottom-group treatments.

    Each point trains a fresh model under its plan to the configured
    budget and evaluates per-frame top-1 on the held-out store. Rows
    come back in (method, treatment, k, seed) order.
    """
    if isinstance(source, (str, Path)):
        source = read_checkpoint(source)
    rows = []
    for method in methods:
        for treatment in treatments:
            for k in k_range:
                for seed in seeds:
                    rng = RngStream(seed)
                    model = FrameEmbedding(source.config, rng.child("init"))
                    model.adapt_head(train_store.n_classes, rng.child("head"))
                    plan = sweep_plan(model.group_names(), k, treatment,
                                      method)
                    apply_transfer_plan(source, model, plan,
                                        rng.child("transfer"))
                    train_embedding(model, train_store.frames,
                                    train_store.labels, config,
                                    rng.child("train"))
                    curve, _ = evaluate_single_shot(
                        model, eval_store.frames, eval_store.labels)
                    row = {"method": method, "treatment": treatment,
                           "k": k, "seed": seed, "top1": curve.top1}
                    rows.append(row)
                    if log is not None:
                        log(row)
    return rows


def sweep_to_csv(rows, path):
    """Write sweep rows as CSV with a fixed column order."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in SWEEP_COLUMNS})
    return path
