"""Top-k accuracy, CMC curves, nAUC, and the evaluation protocols.

Probes are ranked by descending posterior with exact ties broken by
ascending class index, so results are reproducible bit for bit. The
normalized area under the CMC is the discrete mean of top-k accuracy
over k = 1..N.

Two protocols: single-shot scores every frame on its own through the
embedding and its classifier head; multi-shot scores each sequence by
fusing per-frame posteriors from the temporal model, weighted either by
the attention unit's relevance scores or uniformly.
"""

from dataclasses import dataclass

import numpy as np

from .nn import softmax
from .preprocess import expand_channels
from .sequence import SequenceModel
from .validation import ShapeError, check_finite, check_labels, check_ndim

METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class CMCCurve:
    """Cumulative matching curve: topk[k-1] is the fraction of probes
    whose true class sits within the k highest-ranked classes."""

    n_classes: int
    topk: np.ndarray

    def __post_init__(self):
        topk = np.asarray(self.topk, dtype=np.float64)
        if topk.shape != (self.n_classes,):
            raise ShapeError(
                f"curve: expected {self.n_classes} entries, got {topk.shape}")
        if topk.min() < 0.0 or topk.max() > 1.0:
            raise ValueError("top-k accuracies must lie in [0, 1]")
        if (np.diff(topk) < 0).any():
            raise ValueError("a CMC curve must be nondecreasing")
        object.__setattr__(self, "topk", topk)

    @property
    def top1(self):
        return float(self.topk[0])


def ranks_of_truth(posteriors, truths):
    """1-based rank of each probe's true class.

    A stable argsort of the negated posteriors realizes the tie rule:
    equal scores keep ascending class order.
    """
    p = check_ndim(np.asarray(posteriors, dtype=np.float64), 2, "posteriors")
    check_finite(p, "posteriors")
    y = check_labels(truths, p.shape[1])
    if p.shape[0] == 0:
        raise ValueError("no probes to rank")
    if p.shape[0] != y.shape[0]:
        raise ShapeError("posteriors and truths disagree on probe count")
    order = np.argsort(-p, axis=1, kind="stable")
    return (order == y[:, None]).argmax(axis=1) + 1


def topk_and_cmc(posteriors, truths):
    """CMC curve over a probe set."""
    p = np.asarray(posteriors, dtype=np.float64)
    ranks = ranks_of_truth(p, truths)
    n_classes = p.shape[1]
    hits = np.bincount(ranks, minlength=n_classes + 1)[1:]
    return CMCCurve(n_classes, np.cumsum(hits) / ranks.shape[0])


def nauc(curve):
    """Mean top-k accuracy over k = 1..N."""
    return float(curve.topk.mean())


def frame_posteriors(embedding, frames, chunk=200):
    """Eval-mode per-frame posteriors through the classifier head."""
    frames = np.asarray(frames, dtype=np.float64)
    out = []
    for lo in range(0, frames.shape[0], chunk):
        x = expand_channels(frames[lo:lo + chunk])
        out.append(softmax(embedding.forward_logits(x, mode="eval")))
    return np.concatenate(out, axis=0)


def evaluate_single_shot(embedding, frames, labels):
    """Score every frame independently. Returns (curve, report)."""
    labels = check_labels(labels, embedding.n_classes)
    posteriors = frame_posteriors(embedding, frames)
    curve = topk_and_cmc(posteriors, labels)
    return curve, _report(curve, posteriors, labels, "single_shot")


def evaluate_multi_shot(model, sequences, labels, fusion="attention"):
    """Score each sequence by weighted fusion of its frame posteriors.

    ``sequences`` is an iterable of (T_i, 1|3, H, W) arrays; T may vary.
    """
    if not isinstance(model, SequenceModel):
        raise TypeError("multi-shot evaluation needs the temporal model")
    labels = check_labels(labels, model.n_classes)
    if len(sequences) != labels.shape[0]:
        raise ShapeError("sequences and labels disagree on probe count")
    fused = np.zeros((len(sequences), model.n_classes))
    for i, frames in enumerate(sequences):
        x = expand_channels(np.asarray(frames, dtype=np.float64))
        fused[i], _, _ = model.predict_sequence(x, fusion=fusion)
    curve = topk_and_cmc(fused, labels)
    return curve, _report(curve, fused, labels, f"multi_shot/{fusion}")


def _report(curve, posteriors, labels, mode):
    """JSON-ready summary, including a per-class top-1 breakdown."""
    ranks = ranks_of_truth(posteriors, labels)
    per_class = {}
    for cls in np.unique(labels):
        sel = labels == cls
        per_class[int(cls)] = {
            "count": int(sel.sum()),
            "top1": float((ranks[sel] == 1).mean()),
        }
    n = curve.n_classes
    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "mode": mode,
        "probes": int(labels.shape[0]),
        "n_classes": n,
        "top1": curve.top1,
        "top5": float(curve.topk[min(5, n) - 1]),
        "nauc": nauc(curve),
        "per_class": per_class,
    }


def cmc_rows(curve):
    """(k, top-k) pairs for the full-curve CSV artifact."""
    return [(k + 1, float(v)) for k, v in enumerate(curve.topk)]
