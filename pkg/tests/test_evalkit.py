import json

import numpy as np
import pytest

from cmdse.evalkit import (Detection, EvalError, average_precision, box_iou, evaluate, final_score,
                           is_true_positive, read_detections, render_table, write_detections, write_report)
from cmdse.matching import GroundTruthHoi

import eval_fixture as fx


def test_final_score_examples():
    assert final_score(0.8, 0.5, 2) == 0.2
    assert final_score(0.37, 1.0) == 0.37
    assert final_score(0.6, 0.0) == 0.0


def test_final_score_ranking_with_unit_confidence():
    s = np.random.default_rng(0).random(50)
    assert np.array_equal(np.argsort([final_score(v, 1.0, 1.0001) for v in s]), np.argsort(s))


def test_true_positive_examples():
    gt = fx.C
    exact = Detection(1, gt.b_h, gt.b_o, 1, 0.5)
    assert is_true_positive(exact, gt, set())
    assert not is_true_positive(Detection(1, gt.b_h, gt.b_o, 0, 0.5), gt, set())
    shifted = Detection(1, (0.5 + fx.SHIFT, 0.5, 0.3, 0.3), gt.b_o, 1, 0.5)
    assert box_iou(shifted.b_h, gt.b_h) == pytest.approx(0.4, abs=1e-12)
    assert box_iou(shifted.b_o, gt.b_o) == pytest.approx(1.0)
    assert not is_true_positive(shifted, gt, set())
    assert not is_true_positive(exact, gt, {id(gt)})


def test_iou_threshold_is_strict():
    # b sits inside a with half its area, so IoU is exactly 0.5 in floating point
    a = (0.5, 0.5, 0.5, 0.5)
    b = (0.5, 0.5, 0.25, 0.5)
    assert box_iou(a, b) == 0.5
    gt = GroundTruthHoi(a, a, 0, 0, 0)
    assert not is_true_positive(Detection(0, b, a, 0, 1.0), gt, set())
    assert is_true_positive(Detection(0, (0.5, 0.5, 0.26, 0.5), a, 0, 1.0), gt, set())


def test_average_precision_cases():
    assert average_precision([1], 1) == 1.0
    assert average_precision([0, 1], 1) == 0.5
    assert average_precision([], 3) == 0.0
    with pytest.raises(EvalError):
        average_precision([1], 0)


def test_fixture_aps():
    rep = evaluate(fx.DETECTIONS, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS)
    for c, ap in fx.EXPECTED_AP.items():
        assert rep.per_class[c] == pytest.approx(ap, abs=1e-12)
    for k, v in fx.EXPECTED_SPLITS.items():
        assert rep.splits[k] == pytest.approx(v, abs=1e-12)
    for k, v in fx.EXPECTED_BUCKETS.items():
        assert rep.buckets[k] == pytest.approx(v, abs=1e-12)


@pytest.mark.parametrize("fn", [lambda s: s * s, lambda s: s ** 0.5, lambda s: 3 * s + 1, np.exp])
def test_monotone_rescaling_invariance(fn):
    base = evaluate(fx.DETECTIONS, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS)
    dets = [Detection(d.image_id, d.b_h, d.b_o, d.interaction, float(fn(d.score))) for d in fx.DETECTIONS]
    rep = evaluate(dets, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS)
    assert rep.per_class == base.per_class and rep.buckets == base.buckets


def test_order_independence():
    base = evaluate(fx.DETECTIONS, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS).to_json()
    rng = np.random.default_rng(0)
    for _ in range(5):
        dets = [fx.DETECTIONS[i] for i in rng.permutation(len(fx.DETECTIONS))]
        assert evaluate(dets, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS).to_json() == base


def test_perfect_and_seen_only(small_dataset):
    scenes = small_dataset.test.scenes
    vocab = small_dataset.vocab
    perfect = [Detection(s.image_id, g.b_h, g.b_o, g.interaction, 1.0) for s in scenes for g in s.hois]
    rep = evaluate(perfect, scenes, vocab, small_dataset.train_counts())
    assert all(v in (None, 1.0) for v in rep.splits.values()) and rep.splits["full"] == 1.0
    seen = set(vocab.seen_ids())
    rep = evaluate([d for d in perfect if d.interaction in seen], scenes, vocab)
    if rep.splits["unseen"] is not None:
        assert rep.splits["unseen"] == 0.0
    assert rep.splits["seen"] == 1.0


def test_unknown_ids_rejected():
    with pytest.raises(EvalError, match="interaction"):
        evaluate([Detection(0, fx.A.b_h, fx.A.b_o, 7, 0.5)], fx.SCENES, fx.VOCAB)
    with pytest.raises(EvalError, match="image"):
        evaluate([Detection(9, fx.A.b_h, fx.A.b_o, 0, 0.5)], fx.SCENES, fx.VOCAB)


def test_detection_file_round_trip(tmp_path):
    write_detections(fx.DETECTIONS, tmp_path / "d.jsonl")
    assert read_detections(tmp_path / "d.jsonl") == fx.DETECTIONS
    (tmp_path / "bad.jsonl").write_text(json.dumps(fx.DETECTIONS[0].to_json()) + "\n{\"image_id\": 1}\n")
    with pytest.raises(EvalError, match="line 2"):
        read_detections(tmp_path / "bad.jsonl")


def test_report_outputs(tmp_path):
    rep = evaluate(fx.DETECTIONS, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS)
    write_report(rep, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["mAP"]["full"] == pytest.approx(4 / 9)
    table = rep.table()
    assert "Unseen" in table and "44.44" in table and "83.33" in table
    assert render_table(["x"], [[None]]).splitlines()[-1].strip() == "-"
