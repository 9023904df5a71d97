"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together in the
terminal summary (see conftest.py) and also when run with ``-s``.
Run alone with ``pytest tests/test_acceptance.py``.
"""
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from cmdse.evalkit import average_precision, evaluate, final_score
from cmdse.losses import focal_loss, focal_terms, giou_loss, total_loss
from cmdse.matching import (Assignment, MatchWeights, brute_force_match, build_cost_matrix,
                            cost_matrix_from_arrays, ho_distance, hungarian)
from cmdse.numcore import Tensor, backward, no_grad
from cmdse.numcore.gradcheck import numeric_grad, relative_error
from cmdse.synthgen import GeneratorSpec, generate, save_dataset
from cmdse.trainer import RunConfig, ablate, build_model, evaluate_dataset, load_trained, predict, train

import eval_fixture as fx

RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)


@pytest.fixture(scope="module")
def scenes_seed7():
    return generate(GeneratorSpec(num_train=400), seed=7)


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bad = []
    for trial in range(1000):
        k = int(rng.integers(1, 9))
        r = int(rng.integers(k, 25))
        if trial % 2:
            cost = rng.integers(0, 4, size=(r, k)).astype(float)  # many exact ties
        else:
            cost = rng.uniform(0, 10, size=(r, k))
        a, b = hungarian(cost), brute_force_match(cost)
        if a.total != b.total or a.pairs != b.pairs:
            bad.append((trial, r, k))
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 30
    record("hungarian == brute force", ok, f"{1000 - len(bad)}/1000 identical, {elapsed:.1f}s (limit 30s)")
    assert ok, bad[:5]


# the loss is O(10) while many gradients are O(1e-5); smaller steps drown in cancellation
STEP = 1e-4


def _gradcheck_entries(size: int, rng: np.random.Generator) -> np.ndarray:
    if size <= 256:
        return np.arange(size)
    return np.sort(rng.choice(size, 128, replace=False))


def test_full_forward_gradients():
    start = time.perf_counter()
    config = RunConfig(levels=(6, 9, 12))
    ds = generate(GeneratorSpec(num_train=6, num_test=0), seed=7)
    model = build_model(config, ds.vocab)
    scene = max(ds.train.scenes, key=lambda s: len(s.hois))
    feats = model.features(scene.image[None])
    seen = ds.vocab.seen_ids()
    class_index = {c: i for i, c in enumerate(seen)}
    weights = config.weights
    with no_grad():
        pred = model.forward(feats, model.text_bank(seen))[0]
    assignment = hungarian(build_cost_matrix(pred, scene.hois, weights, class_index))
    cached = {}

    def loss(fresh_bank: bool = True) -> Tensor:
        bank = model.text_bank(seen) if fresh_bank else cached["bank"]
        p = model.forward(feats, bank)[0]
        return total_loss(p, scene.hois, assignment, weights, config.gamma_f, config.alpha_f, class_index).total

    named = model.named_parameters()
    for _, p in named:
        p.grad = None
    backward(loss())
    with no_grad():
        cached["bank"] = model.text_bank(seen)
    rng = np.random.default_rng(0)
    worst, checked = {}, 0
    for name, p in named:
        fresh = name.startswith("ctx.")

        def f():
            return loss(fresh).item()

        g = p.grad if p.grad is not None else np.zeros(p.shape)
        idx = _gradcheck_entries(p.size, rng)
        num = numeric_grad(f, p, STEP, idx).reshape(-1)[idx]
        errs = [relative_error(g.reshape(-1)[idx], num, 1e-6).max()]
        # random directions cover the entries that were not probed one by one
        for _ in range(2):
            v = rng.normal(size=p.shape)
            flat = p.data
            with no_grad():
                flat += STEP * v
                fp = f()
                flat -= 2 * STEP * v
                fm = f()
                flat += STEP * v
            errs.append(relative_error(np.array([np.sum(g * v)]), np.array([(fp - fm) / (2 * STEP)]), 1e-6).max())
        worst[name] = float(max(errs))
        checked += len(idx) + 2
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = worst[top] < 1e-4 and elapsed < 300
    record("full forward gradcheck", ok,
           f"{len(named)} parameter tensors, {checked} probes, worst rel err {worst[top]:.2e} ({top}), "
           f"{elapsed:.0f}s (limit 300s)")
    assert ok, sorted(worst.items(), key=lambda kv: -kv[1])[:5]


def test_conditional_two_by_two():
    box = np.tile([0.5, 0.5, 0.1, 0.1], (2, 1))
    got = {}
    for lam in (0.1, 1.0, 5.0, 10.0):
        c = cost_matrix_from_arrays(box, box, np.zeros((2, 2)), np.array([0.25, 0.75]), box, box,
                                    np.array([0, 0]), np.array([0.1, 0.9]), MatchWeights(d=lam))
        h, b = hungarian(c), brute_force_match(c)
        got[lam] = (h.pairs, b.pairs)
    ok = all(h == b == [(0, 0), (1, 1)] for h, b in got.values())
    record("2x2 conditional matching", ok, "Lv 0.25->g 0.1 and Lv 0.75->g 0.9 for lambda_d in {0.1, 1, 5, 10}")
    assert ok, got


def _train_and_eval(config: RunConfig, ds):
    result = train(config, ds)
    model, _ = load_trained(result.checkpoint, ds.vocab)
    images = np.stack([s.image for s in ds.test.scenes])
    dets = predict(model, images, [s.image_id for s in ds.test.scenes], config.gamma, config.top_k)
    return result, evaluate_dataset(dets, ds)


@pytest.mark.slow
def test_distance_term_training(scenes_seed7, tmp_path):
    start = time.perf_counter()
    base = RunConfig(data="unused", out=str(tmp_path / "d5"), seed=7, steps=200)
    r5, e5 = _train_and_eval(base, scenes_seed7)
    r0, e0 = _train_and_eval(replace(base, out=str(tmp_path / "d0"), lambda_d=0.0), scenes_seed7)
    elapsed = time.perf_counter() - start
    m5, m0 = e5.splits["full"], e0.splits["full"]
    ok = r5.agreement > r0.agreement and m5 >= m0 and elapsed < 900
    record("lambda_d=5 vs 0 after 200 steps", ok,
           f"agreement {r5.agreement:.3f} vs {r0.agreement:.3f}, test mAP {m5:.4f} vs {m0:.4f}, "
           f"{elapsed:.0f}s (limit 900s)")
    assert ok


@pytest.mark.slow
def test_semantic_prompts_ablation(scenes_seed7, tmp_path):
    start = time.perf_counter()
    config = RunConfig(data="unused", out=str(tmp_path), seed=7, steps=200)
    rows = {r["variant"]: r for r in ablate(config, "prompts", scenes_seed7).rows}
    elapsed = time.perf_counter() - start
    fused, names = rows["names+descriptions"]["mAP"]["unseen"], rows["names"]["mAP"]["unseen"]
    ok = fused is not None and names is not None and fused >= names and elapsed < 900
    record("fused vs name-only unseen mAP", ok, f"{fused} vs {names}, {elapsed:.0f}s (limit 900s)")
    assert ok


def test_evaluator_fixture():
    report = evaluate(fx.DETECTIONS, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS)
    exact = report.per_class == fx.EXPECTED_AP or all(
        math.isclose(report.per_class[k], v, rel_tol=0, abs_tol=1e-12) for k, v in fx.EXPECTED_AP.items())
    false_then_true = average_precision(np.array([0, 1]), 1)
    invariant = True
    for fn in (np.square, np.sqrt, lambda x: 3 * x + 1, np.exp):
        moved = [replace(d, score=float(fn(d.score))) for d in fx.DETECTIONS]
        invariant &= evaluate(moved, fx.SCENES, fx.VOCAB, fx.TRAIN_COUNTS).per_class == report.per_class
    ok = exact and false_then_true == 0.5 and invariant
    record("evaluator fixture", ok, f"per-class AP {report.per_class}, false-then-true AP {false_then_true}, "
                                    f"monotone-rescale invariant {invariant}")
    assert ok


def test_loss_zero_cases():
    from cmdse.decoder import PredictionSet
    from cmdse.matching import GroundTruthHoi
    g = GroundTruthHoi((0.3, 0.4, 0.2, 0.2), (0.7, 0.6, 0.2, 0.3), 0, 0, 1)
    p = PredictionSet(confidence=Tensor(np.full(2, 0.5)), boxes_h=Tensor(np.array([g.b_h, g.b_h])),
                      boxes_o=Tensor(np.array([g.b_o, g.b_o])), embeddings=Tensor(np.zeros((2, 4))),
                      level_index=np.array([0, 1]), lv=np.array([ho_distance(g.b_h, g.b_o), 0.9]),
                      logits=Tensor(np.zeros((2, 3))), conf_logit=Tensor(np.zeros(2)))
    rep = total_loss(p, [g], Assignment(np.array([0]), np.array([0]), 0.0))
    focal14 = focal_terms(np.array([14.0]), np.array([1.0])).item()
    ok = rep.box.item() == 0.0 and rep.iou.item() == 0.0 and rep.d.item() == 0.0 and focal14 < 1e-6
    record("loss zero cases", ok, f"box {rep.box.item()}, iou {rep.iou.item()}, d {rep.d.item()}, "
                                  f"focal positive at logit 14 = {focal14:.2e}")
    assert ok


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "cmdse.cli", *args], cwd=cwd, capture_output=True, text=True,
                          env={k: v for k, v in os.environ.items() if k != "CMDSE_SEED"})


def test_train_determinism(tmp_path):
    save_dataset(generate(GeneratorSpec(num_train=40, num_test=4), seed=7), tmp_path / "data")
    outputs = []
    for run in ("a", "b"):
        cfg = tmp_path / f"{run}.json"
        cfg.write_text(json.dumps({"data": "data", "out": run, "steps": 20, "seed": 7}))
        proc = _cli("train", "--config", str(cfg), cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        outputs.append({f: (tmp_path / run / f).read_bytes() for f in ("checkpoint.ckpt", "train_log.jsonl")})
    ok = outputs[0] == outputs[1]
    record("bitwise-identical training runs", ok, "checkpoint.ckpt and train_log.jsonl compared byte for byte")
    assert ok


def test_spot_values():
    fs = final_score(0.8, 0.5, 2)
    gl = giou_loss([0, 0, 1, 1], [2, 0, 3, 1], corners=True).item()
    fl = focal_loss([0.0], 0).item()
    # 0.04332 is alpha * (1 - p)**gamma * -log(p) at p = 0.5 to four figures; the 1e-6 check uses the closed form
    focal_exact = 0.25 * 0.5 ** 2 * math.log(2)
    ok = (math.isclose(fs, 0.2, rel_tol=1e-12) and math.isclose(gl, 4 / 3, rel_tol=1e-12)
          and abs(fl - focal_exact) / focal_exact <= 1e-6 and round(fl, 5) == 0.04332)
    record("spot values", ok, f"final_score {fs}, GIoU loss {gl}, focal {fl:.7f}")
    assert ok
