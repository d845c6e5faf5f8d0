"""Operator entry point.

Commands: synth, preprocess, train-embedding, train-sequence, transfer,
ablate, evaluate. Every run resolves its configuration (defaults, an
optional INI file, then ``--set section.key=value`` overrides), writes
the resolved snapshot next to its artifacts, and is reproducible from
that snapshot plus the seed. Outputs land under ``--out``, defaulting
to the DEPTHREID_OUT environment variable and then ``./runs``; inputs
are never modified.

Exit codes: 0 on success, 1 on a config or runtime failure (single
machine-parsable ``error:`` line on stderr), 2 on usage errors.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .data import (
    MANIFEST_NAME,
    SPLITS,
    assign_splits,
    load_manifest,
    load_split,
    save_manifest,
    scan_dataset,
    windows_for_training,
)
from .embedding import FrameEmbedding
from .metrics import cmc_rows, evaluate_multi_shot, evaluate_single_shot
from .nn import RngStream
from .sequence import SequenceModel
from .synth import generate_synthetic
from .training import SequenceTrainer, train_embedding
from .transfer import (
    METHODS,
    TREATMENTS,
    ablation_sweep,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    sweep_plan,
    sweep_to_csv,
)

OUTPUT_ENV = "DEPTHREID_OUT"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override one config value")
    common.add_argument("--out", help="output directory "
                        f"(default: ${OUTPUT_ENV} or ./runs)")
    common.add_argument("--seed", type=int, help="shorthand for train.seed")

    parser = argparse.ArgumentParser(
        prog="depthreid",
        description="Depth-video person re-identification toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--data", help="dataset directory (default: OUT/dataset)")

    p = sub.add_parser("preprocess", parents=[common],
                       help="scan a dataset, assign splits, cache the "
                            "manifest")
    p.add_argument("--data", required=True)

    p = sub.add_parser("train-embedding", parents=[common],
                       help="train the frame embedding on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", help="manifest file from `preprocess`")

    p = sub.add_parser("train-sequence", parents=[common],
                       help="train the sequence model (both phases)")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--init", help="embedding checkpoint to start from "
                                  "(skips the frame phase)")

    p = sub.add_parser("transfer", parents=[common],
                       help="transfer a source embedding to a new dataset")
    p.add_argument("--source", required=True, help="source checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")

    p = sub.add_parser("ablate", parents=[common],
                       help="sweep transfer depth for both methods")
    p.add_argument("--source", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--k", help="depths, e.g. 0..4 or 0,2,3 "
                               "(default: transfer.k_range)")
    p.add_argument("--treatment", choices=TREATMENTS + ("both",))
    p.add_argument("--method", choices=METHODS + ("both",))

    p = sub.add_parser("evaluate", parents=[common],
                       help="evaluate a checkpoint on one split")
    p.add_argument("--model", required=True, help="checkpoint to evaluate")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=("single_shot", "multi_shot"),
                   help="default: eval.mode")
    return parser


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_out(args):
    root = args.out or os.environ.get(OUTPUT_ENV) or "runs"
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return overrides


def _split_manifest(args, cfg):
    """The dataset manifest: an explicit file, a cached one next to the
    data, or a fresh scan with seeded split assignment."""
    data_dir = Path(args.data)
    path = getattr(args, "manifest", None)
    if path is None and (data_dir / MANIFEST_NAME).exists():
        path = data_dir / MANIFEST_NAME
    if path is not None:
        return load_manifest(path)
    manifest = scan_dataset(data_dir)
    rng = RngStream(cfg.getint("train", "seed")).child("splits")
    return assign_splits(manifest, rng,
                         test_fraction=cfg.getfloat("train", "test_fraction"),
                         val_fraction=cfg.getfloat("train", "val_fraction"))


def _write_jsonl(records, path):
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _train_embedding_phase(cfg, store, rng):
    model = FrameEmbedding(cfg.embedding_config(), rng.child("init"))
    model.adapt_head(store.n_classes, rng.child("head"))
    history = train_embedding(model, store.frames, store.labels,
                              cfg.train_config(), rng.child("train_frames"))
    return model, history


def _choice(cfg, section, key, allowed):
    value = cfg.get(section, key)
    if value not in allowed:
        raise ConfigError(f"{section}.{key}",
                          f"must be one of {allowed}, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# commands


def _cmd_synth(args, cfg, out):
    data_dir = Path(args.data) if args.data else out / "dataset"
    rng = RngStream(cfg.getint("train", "seed"))
    written = generate_synthetic(cfg.synth_config(), rng, data_dir)
    _write_json({"schema_version": 1, "frames": written,
                 "root": str(data_dir)}, out / "synth.json")
    print(f"wrote {written} frames under {data_dir}")
    return 0


def _cmd_preprocess(args, cfg, out):
    manifest = scan_dataset(args.data)
    rng = RngStream(cfg.getint("train", "seed")).child("splits")
    manifest = assign_splits(
        manifest, rng,
        test_fraction=cfg.getfloat("train", "test_fraction"),
        val_fraction=cfg.getfloat("train", "val_fraction"))
    save_manifest(manifest, out / MANIFEST_NAME)
    report = {"schema_version": 1, "root": manifest.root,
              "n_classes": manifest.n_classes,
              "sequences": {s: len(manifest.split_entries(s))
                            for s in SPLITS},
              "frames": {s: sum(len(e.frames)
                                for e in manifest.split_entries(s))
                         for s in SPLITS}}
    _write_json(report, out / "preprocess.json")
    print(f"{manifest.n_classes} people, "
          f"{report['frames']['train']} train / "
          f"{report['frames']['test']} test frames; manifest cached")
    return 0


def _cmd_train_embedding(args, cfg, out):
    seed = cfg.getint("train", "seed")
    store = load_split(_split_manifest(args, cfg), "train")
    model, history = _train_embedding_phase(cfg, store, RngStream(seed))
    save_checkpoint(model, out / "embedding.ckpt",
                    provenance=f"train-embedding seed={seed}")
    _write_jsonl(history, out / "train_log.jsonl")
    print(f"embedding checkpoint: {out / 'embedding.ckpt'}")
    return 0


def _cmd_train_sequence(args, cfg, out):
    seed = cfg.getint("train", "seed")
    rng = RngStream(seed)
    train_cfg = cfg.train_config()
    store = load_split(_split_manifest(args, cfg), "train")
    if args.init:
        source = read_checkpoint(args.init)
        if source.kind != "embedding":
            raise ValueError(
                f"{args.init}: --init takes an embedding checkpoint")
        model = load_checkpoint(args.init, rng.child("restore"),
                                n_classes=store.n_classes)
        history = []
    else:
        model, history = _train_embedding_phase(cfg, store, rng)
    sequence_model = SequenceModel(model, store.n_classes,
                                   rng.child("sequence"))
    windows, valid, labels = windows_for_training(store, train_cfg.window)
    trainer = SequenceTrainer(sequence_model, store.frames, windows, valid,
                              labels, train_cfg, rng.child("train_windows"))
    history.extend(trainer.train())
    save_checkpoint(sequence_model, out / "sequence.ckpt",
                    provenance=f"train-sequence seed={seed}")
    _write_jsonl(history, out / "train_log.jsonl")
    print(f"sequence checkpoint: {out / 'sequence.ckpt'}")
    return 0


def _cmd_transfer(args, cfg, out):
    seed = cfg.getint("train", "seed")
    rng = RngStream(seed)
    source = read_checkpoint(args.source)
    if source.kind != "embedding":
        raise ValueError(f"{args.source}: transfer needs an embedding "
                         "checkpoint")
    store = load_split(_split_manifest(args, cfg), "train")
    plan = sweep_plan(
        source.config.group_names() + ["head"],
        cfg.getint("transfer", "k_frozen"),
        _choice(cfg, "transfer", "treatment", TREATMENTS),
        _choice(cfg, "transfer", "method", METHODS),
        slow_multiplier=cfg.getfloat("transfer", "slow_multiplier"))
    model = load_checkpoint(args.source, rng.child("transfer"),
                            n_classes=store.n_classes, plan=plan)
    history = train_embedding(model, store.frames, store.labels,
                              cfg.train_config(), rng.child("train_frames"))
    save_checkpoint(model, out / "transferred.ckpt",
                    provenance=f"transfer from {Path(args.source).name} "
                               f"seed={seed}")
    _write_jsonl(history, out / "train_log.jsonl")
    print(f"transferred checkpoint: {out / 'transferred.ckpt'}")
    return 0


def _parse_k_range(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(part) for part in text.split(",") if part.strip())


def _cmd_ablate(args, cfg, out):
    source = read_checkpoint(args.source)
    if source.kind != "embedding":
        raise ValueError(f"{args.source}: ablation needs an embedding "
                         "checkpoint")
    manifest = _split_manifest(args, cfg)
    train_store = load_split(manifest, "train")
    eval_store = load_split(manifest,
                            _choice(cfg, "eval", "split", SPLITS))
    if args.k:
        try:
            k_range = _parse_k_range(args.k)
        except ValueError:
            raise ConfigError("k", f"expected 0..4 or a comma list, "
                                   f"got {args.k!r}") from None
    else:
        k_range = cfg.getints("transfer", "k_range")
    treatment = args.treatment or _choice(cfg, "transfer", "treatment",
                                          TREATMENTS)
    method = args.method or _choice(cfg, "transfer", "method", METHODS)
    treatments = TREATMENTS if treatment == "both" else (treatment,)
    methods = METHODS if method == "both" else (method,)
    rows = ablation_sweep(source, train_store, eval_store, k_range,
                          cfg.train_config(), treatments=treatments,
                          methods=methods,
                          seeds=cfg.getints("transfer", "seeds"))
    sweep_to_csv(rows, out / "ablation.csv")
    print(f"{len(rows)} sweep rows: {out / 'ablation.csv'}")
    return 0


def _cmd_evaluate(args, cfg, out):
    mode = args.mode or _choice(cfg, "eval", "mode",
                                ("single_shot", "multi_shot"))
    store = load_split(_split_manifest(args, cfg),
                       _choice(cfg, "eval", "split", SPLITS))
    model = load_checkpoint(args.model)
    if mode == "single_shot":
        embedding = model.embedding if isinstance(model, SequenceModel) \
            else model
        if embedding.head is None:
            raise ValueError(f"{args.model}: no classifier head to "
                             "evaluate per frame")
        curve, report = evaluate_single_shot(embedding, store.frames,
                                             store.labels)
    else:
        if not isinstance(model, SequenceModel):
            raise ValueError(f"{args.model}: multi-shot evaluation needs "
                             "a sequence checkpoint")
        fusion = _choice(cfg, "eval", "fusion", ("attention", "uniform"))
        curve, report = evaluate_multi_shot(model, store.sequences(),
                                            store.seq_labels, fusion=fusion)
    _write_json(report, out / "metrics.json")
    with open(out / "cmc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("k", "topk"))
        writer.writerows(cmc_rows(curve))
    print(f"top-1 {report['top1']:.4f}, nAUC {report['nauc']:.4f} "
          f"({report['mode']}, {report['probes']} probes)")
    return 0


_DISPATCH = {
    "synth": _cmd_synth,
    "preprocess": _cmd_preprocess,
    "train-embedding": _cmd_train_embedding,
    "train-sequence": _cmd_train_sequence,
    "transfer": _cmd_transfer,
    "ablate": _cmd_ablate,
    "evaluate": _cmd_evaluate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args)).validate()
        out = _resolve_out(args)
        cfg.snapshot(out / "config.ini")
        return _DISPATCH[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
