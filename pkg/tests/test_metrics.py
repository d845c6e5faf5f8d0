"""Ranking, CMC, nAUC, and the two evaluation protocols."""

import numpy as np
import pytest

from depthreid.embedding import EmbeddingConfig, FrameEmbedding
from depthreid.metrics import (
    CMCCurve,
    cmc_rows,
    evaluate_multi_shot,
    evaluate_single_shot,
    nauc,
    ranks_of_truth,
    topk_and_cmc,
)
from depthreid.nn import RngStream
from depthreid.sequence import SequenceModel

from reference_impls import ref_rank_of_truth, ref_topk_curve


def test_single_probe_ranked_first():
    curve = topk_and_cmc(np.array([[0.7, 0.2, 0.1]]), [0])
    assert curve.topk.tolist() == [1.0, 1.0, 1.0]


def test_two_probes_ranked_first_and_third():
    posteriors = np.array([
        [0.4, 0.3, 0.2, 0.1],   # truth 0 at rank 1
        [0.4, 0.3, 0.2, 0.1],   # truth 2 at rank 3
    ])
    curve = topk_and_cmc(posteriors, [0, 2])
    assert curve.topk.tolist() == [0.5, 0.5, 1.0, 1.0]


def test_tie_breaks_toward_lower_class_index():
    p = np.array([[0.4, 0.4, 0.2]])
    assert ranks_of_truth(p, [0])[0] == 1
    assert ranks_of_truth(p, [1])[0] == 2


def test_ranks_match_brute_force():
    rng = np.random.default_rng(42)
    for trial in range(1000):
        n = int(rng.integers(2, 9))
        probes = int(rng.integers(1, 6))
        if trial % 2 == 0:
            posteriors = rng.random((probes, n))
        else:
            # coarse grid forces exact ties
            posteriors = rng.integers(0, 4, size=(probes, n)) / 4.0
        truths = rng.integers(0, n, size=probes)
        got = ranks_of_truth(posteriors, truths)
        want = [ref_rank_of_truth(list(row), int(t))
                for row, t in zip(posteriors, truths)]
        assert got.tolist() == want
        curve = topk_and_cmc(posteriors, truths)
        assert curve.topk.tolist() == ref_topk_curve(posteriors, truths)


def test_curve_validation():
    with pytest.raises(ValueError):
        CMCCurve(3, np.array([0.5, 0.4, 1.0]))
    with pytest.raises(ValueError):
        CMCCurve(2, np.array([0.5, 1.5]))
    with pytest.raises(Exception):
        CMCCurve(3, np.array([0.5, 1.0]))


def test_empty_probe_set_rejected():
    with pytest.raises(ValueError):
        topk_and_cmc(np.zeros((0, 3)), [])


def test_unknown_labels_rejected():
    with pytest.raises(ValueError):
        topk_and_cmc(np.full((2, 3), 1 / 3), [0, 3])


def test_nauc_perfect():
    assert nauc(CMCCurve(4, np.ones(4))) == 1.0


def test_nauc_hand_case():
    assert nauc(CMCCurve(4, np.array([0.5, 0.75, 1.0, 1.0]))) == 0.8125


def test_nauc_uniform_random_curve():
    for n in (2, 5, 12, 31):
        curve = CMCCurve(n, np.arange(1, n + 1) / n)
        assert nauc(curve) == (n + 1) / (2 * n)


def test_nauc_bounds():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        curve = topk_and_cmc(rng.random((20, n)), rng.integers(0, n, 20))
        value = nauc(curve)
        assert curve.top1 <= value <= 1.0
        assert curve.topk[-1] == 1.0
        assert (np.diff(curve.topk) >= 0).all()


def test_random_posteriors_top1_near_chance():
    rng = np.random.default_rng(7)
    n = 12
    posteriors = rng.random((3000, n))
    curve = topk_and_cmc(posteriors, rng.integers(0, n, 3000))
    assert abs(curve.top1 - 1 / n) < 0.02


def test_cmc_rows():
    rows = cmc_rows(CMCCurve(3, np.array([0.5, 0.75, 1.0])))
    assert rows == [(1, 0.5), (2, 0.75), (3, 1.0)]


# ------------------------------------------------------------ protocols

def _tiny_models(seed, n_classes=3):
    rng = RngStream(seed)
    embedding = FrameEmbedding(
        EmbeddingConfig(conv_channels=(4, 4, 4, 4), fc_dims=(32, 256),
                        dropout=0.0), rng.child("embed"))
    embedding.adapt_head(n_classes, rng.child("head"))
    model = SequenceModel(embedding, n_classes, rng.child("seq"), dropout=0.0)
    return embedding, model


def _frames(rng, n):
    return np.clip(rng.normal((n, 1, 144, 56)) * 30 + 128, 1, 256)


def test_single_shot_shapes_and_determinism():
    embedding, _ = _tiny_models(0)
    rng = RngStream(1)
    frames = _frames(rng, 6)
    labels = [0, 1, 2, 0, 1, 2]
    curve_a, report_a = evaluate_single_shot(embedding, frames, labels)
    curve_b, report_b = evaluate_single_shot(embedding, frames, labels)
    assert curve_a.topk.tolist() == curve_b.topk.tolist()
    assert report_a == report_b
    assert report_a["probes"] == 6
    assert report_a["mode"] == "single_shot"
    assert set(report_a["per_class"]) == {0, 1, 2}
    assert sum(c["count"] for c in report_a["per_class"].values()) == 6


def test_per_class_top1_consistent_with_overall():
    embedding, _ = _tiny_models(2)
    rng = RngStream(5)
    frames = _frames(rng, 9)
    labels = np.array([0, 1, 2] * 3)
    curve, report = evaluate_single_shot(embedding, frames, labels)
    weighted = sum(c["count"] * c["top1"]
                   for c in report["per_class"].values()) / 9
    assert abs(weighted - curve.top1) < 1e-12


def test_multi_shot_single_frame_equals_frame_posterior():
    # with T = 1 fusion is the identity, whatever the weights
    _, model = _tiny_models(4)
    rng = RngStream(6)
    seqs = [_frames(rng, 1) for _ in range(4)]
    labels = [0, 1, 2, 0]
    curve_att, _ = evaluate_multi_shot(model, seqs, labels, fusion="attention")
    curve_uni, _ = evaluate_multi_shot(model, seqs, labels, fusion="uniform")
    assert curve_att.topk.tolist() == curve_uni.topk.tolist()
    fused, per_frame, _ = model.predict_sequence(
        np.repeat(seqs[0], 3, axis=1), fusion="attention")
    assert np.allclose(fused, per_frame[0], atol=1e-15)


def test_multi_shot_variable_lengths_and_modes():
    _, model = _tiny_models(9)
    rng = RngStream(10)
    seqs = [_frames(rng, t) for t in (2, 4, 3)]
    labels = [1, 0, 2]
    curve, report = evaluate_multi_shot(model, seqs, labels)
    assert report["mode"] == "multi_shot/attention"
    assert curve.topk.shape == (3,)
    again, _ = evaluate_multi_shot(model, seqs, labels)
    assert curve.topk.tolist() == again.topk.tolist()


def test_multi_shot_rejects_wrong_model_and_labels():
    embedding, model = _tiny_models(11)
    rng = RngStream(12)
    seqs = [_frames(rng, 2)]
    with pytest.raises(TypeError):
        evaluate_multi_shot(embedding, seqs, [0])
    with pytest.raises(ValueError):
        evaluate_multi_shot(model, seqs, [7])
