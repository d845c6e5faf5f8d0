"""Dataset ingestion, manifest caching, split assignment, and batching.

Directory grammar::

    root/
      person_<id>/          ids dense in [1, N]
        seq_<id>/           ids unique per person
          frame_<n>.png     16-bit grayscale, value = depth in millimeters
          mask_<n>.png      optional 8-bit body-index mask, nonzero = person

RGB datasets (the transfer source) use the same grammar with 3-channel
frames. Masks either accompany every frame of a sequence or none of it;
a partial set is an error naming the missing file. A ``manifest.json``
at the root is the cached scan and is skipped while scanning.

Splits partition sequences, never frames, so a sequence can never leak
across train/test.
"""

import json
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .preprocess import (
    CropRect,
    depth_frame_to_network_input,
    rgb_frame_to_network_input,
)

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")

_PERSON_RE = re.compile(r"^person_(\d+)$")
_SEQ_RE = re.compile(r"^seq_(\d+)$")
_FRAME_RE = re.compile(r"^frame_(\d+)\.png$")
_MASK_RE = re.compile(r"^mask_(\d+)\.png$")


@dataclass(frozen=True)
class SequenceEntry:
    """One video: a person id, a sequence id, ordered frame files
    (relative to the dataset root), optional mask files, and a split tag."""

    person: int
    sequence: int
    frames: tuple
    masks: tuple
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}, expected {SPLITS}")
        if self.masks is not None and len(self.masks) != len(self.frames):
            raise ValueError(
                f"person_{self.person}/seq_{self.sequence}: "
                f"{len(self.frames)} frames but {len(self.masks)} masks")


@dataclass
class DatasetManifest:
    root: str
    n_classes: int
    entries: list

    def split_entries(self, split):
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}, expected {SPLITS}")
        return [e for e in self.entries if e.split == split]


def _scan_sequence(root, person, seq_dir, seq_id, problems):
    frames, masks = {}, {}
    for child in sorted(seq_dir.iterdir()):
        m = _FRAME_RE.match(child.name)
        if m:
            frames[int(m.group(1))] = str(child.relative_to(root))
            continue
        m = _MASK_RE.match(child.name)
        if m:
            masks[int(m.group(1))] = str(child.relative_to(root))
            continue
        problems.append(f"unrecognized entry {child.relative_to(root)}")
    if not frames:
        problems.append(f"{seq_dir.relative_to(root)} has no frames")
        return None
    order = sorted(frames)
    if masks:
        ok = True
        for n in order:
            if n not in masks:
                problems.append(
                    f"person_{person}/seq_{seq_id}: mask_{n}.png missing "
                    f"for frame_{n}.png")
                ok = False
        for n in sorted(masks):
            if n not in frames:
                problems.append(
                    f"person_{person}/seq_{seq_id}: mask_{n}.png has no frame")
                ok = False
        if not ok:
            return None
        mask_list = tuple(masks[n] for n in order)
    else:
        mask_list = None
    return SequenceEntry(person, seq_id,
                         tuple(frames[n] for n in order), mask_list)


def scan_dataset(root):
    """Walk the directory grammar into a manifest.

    Frames are ordered by their numeric index. Anything that does not fit
    the grammar is collected and reported in one error; nothing is
    silently skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    problems = []
    persons = {}
    for child in sorted(root.iterdir()):
        if child.name == MANIFEST_NAME:
            continue
        m = _PERSON_RE.match(child.name)
        if not m or not child.is_dir():
            problems.append(f"unrecognized entry {child.name}")
            continue
        pid = int(m.group(1))
        if pid in persons:
            problems.append(
                f"duplicate person id {pid} ({persons[pid]} and {child.name})")
            continue
        persons[pid] = child.name
    if not persons and not problems:
        raise ValueError(f"dataset root {root} is empty")
    ids = sorted(persons)
    if ids and ids != list(range(1, len(ids) + 1)):
        problems.append(f"person ids must be dense in [1, N], found {ids}")

    entries = []
    for pid in ids:
        person_dir = root / persons[pid]
        seqs = {}
        for child in sorted(person_dir.iterdir()):
            m = _SEQ_RE.match(child.name)
            if not m or not child.is_dir():
                problems.append(
                    f"unrecognized entry {child.relative_to(root)}")
                continue
            sid = int(m.group(1))
            if sid in seqs:
                problems.append(
                    f"duplicate sequence id {sid} under {persons[pid]}")
                continue
            seqs[sid] = child
        if not seqs:
            problems.append(f"{persons[pid]} has no sequences")
        for sid in sorted(seqs):
            entry = _scan_sequence(root, pid, seqs[sid], sid, problems)
            if entry is not None:
                entries.append(entry)

    if problems:
        listing = "\n  ".join(problems)
        raise ValueError(f"dataset at {root} is malformed:\n  {listing}")
    return DatasetManifest(str(root), len(ids), entries)


def assign_splits(manifest, rng, test_fraction=0.5, val_fraction=0.0):
    """Tag each sequence with a split, partitioning per person.

    Every person keeps at least one training sequence; requested nonzero
    fractions round to at least one sequence. Assignment is a seeded
    permutation of each person's sequences, so it is reproducible.
    """
    if min(test_fraction, val_fraction) < 0 or test_fraction + val_fraction >= 1:
        raise ValueError("split fractions must be nonnegative and sum below 1")
    by_person = {}
    for e in manifest.entries:
        by_person.setdefault(e.person, []).append(e)
    entries = []
    for person in sorted(by_person):
        group = by_person[person]
        k = len(group)
        n_test = min(k, max(1, round(k * test_fraction))) if test_fraction else 0
        n_val = min(k, max(1, round(k * val_fraction))) if val_fraction else 0
        if n_test + n_val >= k:
            raise ValueError(
                f"person {person} has {k} sequences, not enough for "
                f"test={n_test} and val={n_val} plus training")
        order = rng.permutation(k)
        tags = ["train"] * k
        for i in order[:n_test]:
            tags[i] = "test"
        for i in order[n_test:n_test + n_val]:
            tags[i] = "val"
        entries.extend(replace(e, split=t) for e, t in zip(group, tags))
    return DatasetManifest(manifest.root, manifest.n_classes, entries)


def save_manifest(manifest, path=None):
    """Cache a manifest as JSON (default: manifest.json in its root)."""
    path = Path(path) if path else Path(manifest.root) / MANIFEST_NAME
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "root": manifest.root,
        "n_classes": manifest.n_classes,
        "entries": [asdict(e) for e in manifest.entries],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_manifest(path):
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != MANIFEST_SCHEMA_VERSION:
        raise ValueError(
            f"manifest schema {version!r} unsupported "
            f"(expected {MANIFEST_SCHEMA_VERSION})")
    entries = [
        SequenceEntry(e["person"], e["sequence"], tuple(e["frames"]),
                      tuple(e["masks"]) if e["masks"] is not None else None,
                      e["split"])
        for e in doc["entries"]
    ]
    return DatasetManifest(doc["root"], doc["n_classes"], entries)


# ---------------------------------------------------------------- loading

def load_depth_frame(path):
    """16-bit grayscale PNG -> uint16 millimeter map."""
    img = Image.open(path)
    if img.mode not in ("I;16", "I;16B", "I"):
        raise ValueError(f"{path}: expected 16-bit grayscale, got {img.mode}")
    return np.asarray(img).astype(np.uint16)


def load_mask(path):
    img = Image.open(path)
    if img.mode != "L":
        raise ValueError(f"{path}: expected 8-bit mask, got {img.mode}")
    return (np.asarray(img) > 0).astype(np.uint8)


def load_rgb_frame(path):
    img = Image.open(path)
    if img.mode != "RGB":
        raise ValueError(f"{path}: expected RGB frame, got {img.mode}")
    return np.asarray(img)


@dataclass
class FrameStore:
    """Preprocessed network inputs for one split, grouped by sequence.

    ``frames`` is (n, 1, 144, 56) for depth data (channels are replicas,
    stored once) or (n, 3, 144, 56) for RGB. ``seq_bounds`` holds prefix
    offsets: sequence i is frames[seq_bounds[i]:seq_bounds[i+1]].
    """

    frames: np.ndarray
    labels: np.ndarray
    seq_bounds: np.ndarray
    seq_labels: np.ndarray
    n_classes: int

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_sequences(self):
        return self.seq_labels.shape[0]

    def sequence(self, i):
        return self.frames[self.seq_bounds[i]:self.seq_bounds[i + 1]]

    def sequences(self):
        return [self.sequence(i) for i in range(self.n_sequences)]


def load_split(manifest, split, offset=56, margin=0.05):
    """Materialize one split as preprocessed network inputs.

    Depth frames run through the crop/gray/resize route with their masks;
    RGB frames through the RGB route. A dataset must be all one or the
    other. Without masks the whole frame is the crop.
    """
    entries = manifest.split_entries(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    root = Path(manifest.root)
    chunks, labels, seq_labels, bounds = [], [], [], [0]
    kind = None
    for e in entries:
        for i, rel in enumerate(e.frames):
            img_path = root / rel
            img = Image.open(img_path)
            is_rgb = img.mode == "RGB"
            if kind is None:
                kind = "rgb" if is_rgb else "depth"
            elif kind != ("rgb" if is_rgb else "depth"):
                raise ValueError(
                    f"{img_path}: mixed RGB and depth frames in one dataset")
            mask = load_mask(root / e.masks[i]) if e.masks else None
            rect = None
            if mask is None:
                rect = CropRect(0, 0, img.height, img.width)
            if is_rgb:
                x = rgb_frame_to_network_input(load_rgb_frame(img_path),
                                               mask=mask, rect=rect,
                                               margin=margin)
            else:
                depth = load_depth_frame(img_path)
                x = depth_frame_to_network_input(depth, mask=mask, rect=rect,
                                                 offset=offset,
                                                 margin=margin)[:1]
            chunks.append(x)
            labels.append(e.person - 1)
        bounds.append(len(chunks))
        seq_labels.append(e.person - 1)
    return FrameStore(
        frames=np.stack(chunks),
        labels=np.asarray(labels, dtype=np.int64),
        seq_bounds=np.asarray(bounds, dtype=np.int64),
        seq_labels=np.asarray(seq_labels, dtype=np.int64),
        n_classes=manifest.n_classes,
    )


# --------------------------------------------------------------- batching

def windows_for_training(store, window):
    """Contiguous fixed-length windows over every sequence of a store.

    A sequence of L >= window frames yields L - window + 1 windows. A
    shorter one yields a single window padded by repeating its last
    frame, with validity flags marking the padding.

    Returns (windows, valid, labels): (m, window) frame indices,
    (m, window) flags, (m,) labels.
    """
    window = int(window)
    if window < 1:
        raise ValueError("window must be positive")
    rows, flags, labels = [], [], []
    for i in range(store.n_sequences):
        lo, hi = store.seq_bounds[i], store.seq_bounds[i + 1]
        length = hi - lo
        if length >= window:
            for start in range(lo, hi - window + 1):
                rows.append(np.arange(start, start + window))
                flags.append(np.ones(window, dtype=bool))
                labels.append(store.seq_labels[i])
        else:
            idx = np.concatenate([
                np.arange(lo, hi),
                np.full(window - length, hi - 1, dtype=np.int64),
            ])
            rows.append(idx)
            mask = np.zeros(window, dtype=bool)
            mask[:length] = True
            flags.append(mask)
            labels.append(store.seq_labels[i])
    if not rows:
        raise ValueError("store has no sequences")
    return (np.stack(rows).astype(np.int64), np.stack(flags),
            np.asarray(labels, dtype=np.int64))


def iter_batches(count, batch_size, rng):
    """Seeded permutation of range(count), yielded in batch-size chunks.

    Every index appears exactly once per call, so one pass is one epoch.
    """
    if count < 1 or batch_size < 1:
        raise ValueError("count and batch_size must be positive")
    order = rng.permutation(count)
    for lo in range(0, count, batch_size):
        yield order[lo:lo + batch_size]
