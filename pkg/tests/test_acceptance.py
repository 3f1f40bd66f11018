"""End-to-end acceptance criteria, one test each, printing a PASS/FAIL line."""

import json
import math
import time

import numpy as np
import pytest
from oracles import brute_force_rasterize, count_tensors

from qaa.checks import SUITES
from qaa.cli import run_command
from qaa.fusion import (
    FUSION_KINDS,
    FusionConfig,
    _shapes,
    block_core,
    full_core_bilinear,
    init_fusion,
    param_count,
)
from qaa.metrics import evaluate, mpt
from qaa.model import QAAClassifier, forward_branch
from qaa.object_map import GridSpec, InstanceMask, ObjectMap, rasterize_instances
from qaa.params import ParamStore
from qaa.prior import accumulate_counts, normalize_counts, threshold_sweep
from qaa.synth import build_split
from qaa.tensor import Tensor

MCB = [93.0, 92.8, 68.5, 56.7, 52.4, 35.4, 85.4, 84.8, 35.0, 93.6, 51.0, 66.3]
LINEAR = [50.9, 19.0, 55.7, 0.1, 0.0, 7.3, 23.8, 90.3, 15.2, 93.5, 50.1, 56.3]


def test_1_metric_oracle(acceptance):
    start = time.perf_counter()
    arith, harm, zero = mpt(MCB, "arithmetic"), mpt(MCB, "harmonic"), mpt(LINEAR, "harmonic")
    elapsed = time.perf_counter() - start
    ok = abs(arith - 67.9) <= 0.05 and abs(harm - 60.5) <= 0.05 and zero == 0.0 and elapsed < 1.0
    acceptance(1, "metric oracle", ok,
               f"arithmetic {arith:.4f} vs 67.9, harmonic {harm:.4f} vs 60.5, zero-type harmonic {zero}")
    assert abs(arith - 67.9) <= 0.05
    assert zero == 0.0
    assert abs(harm - 60.5) <= 0.05, f"harmonic MPT {harm:.4f} outside 60.5 +- 0.05"


def test_2_gradient_suite(acceptance):
    start = time.perf_counter()
    reports = {name: suite() for name, suite in SUITES.items()}
    elapsed = time.perf_counter() - start
    worst = max(r.max_error for r in reports.values())
    ok = all(r.passed for r in reports.values()) and elapsed < 60
    acceptance(2, "gradient suite", ok, f"{len(reports)} checks, max relative error {worst:.2e}, {elapsed:.1f}s")
    assert ok, {n: r.max_error for n, r in reports.items() if not r.passed}


def _random_masks(rng, h, w):
    masks = []
    for _ in range(rng.integers(0, 5)):
        bm = np.zeros((h, w), dtype=bool)
        r0, c0 = rng.integers(0, h), rng.integers(0, w)
        bm[r0 : r0 + rng.integers(1, h + 1), c0 : c0 + rng.integers(1, w + 1)] = True
        bm |= rng.random((h, w)) < rng.choice([0.0, 0.02, 0.2])
        masks.append(InstanceMask.from_bitmap(bm, float(rng.choice([0.3, 0.5, 0.8, 1.0]))))
    return masks


def test_3_rasterizer_oracle(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        h, w = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        grid = GridSpec(int(rng.integers(1, min(h, 8) + 1)), int(rng.integers(1, min(w, 8) + 1)))
        tau = float(rng.choice([0.0, 0.1, 0.25, 0.5, 0.9]))
        masks = _random_masks(rng, h, w)
        got = rasterize_instances(masks, grid, tau).bits.tolist()
        want = brute_force_rasterize([(m.runs, m.confidence) for m in masks], h, w, grid.rows, grid.cols, tau)
        mismatches += got != want
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    acceptance(3, "rasterizer oracle", ok, f"{200 - mismatches}/200 exact matches, {elapsed:.1f}s")
    assert ok


def test_4_structural_reductions(acceptance):
    rng = np.random.default_rng(7)
    cfg = FusionConfig(kind="linear", d_q=6, d_v=5, d_out=4, c=7)
    fparams = init_fusion(ParamStore(7), "f", cfg)
    q, feats = Tensor(rng.normal(size=(3, 6))), rng.normal(size=(3, 12, 5))
    sg = forward_branch(q, feats, "sg", fparams, cfg).data
    qaa = forward_branch(q, feats, "qaa", fparams, cfg, maps=np.ones((3, 12), dtype=np.uint8)).data
    qaa_ok = sg.tobytes() == qaa.tobytes()

    records = build_split("train", 80, seed=3, grid=GridSpec(4, 4))
    y = [r.answer for r in records]
    kw = dict(fusion_hidden=8, d_q=8, embed_dim=6, epochs=1, random_state=5)
    a = QAAClassifier(branches=("sg",), **kw).fit(records, y).decision_function(records)
    b = QAAClassifier(branches=("iqaa",), prior_threshold=0.0, **kw).fit(records, y).decision_function(records)
    iqaa_ok = a.tobytes() == b.tobytes()

    block_err = 0.0
    for _ in range(20):
        tq, tv, to = (int(x) for x in rng.integers(1, 6, size=3))
        core = rng.normal(size=(tq, tv, to))
        qt, vt = rng.normal(size=(4, tq)), rng.normal(size=(4, tv))
        got = block_core(Tensor(qt), Tensor(vt), {"T_1": Tensor(core)},
                         FusionConfig(kind="block", t_q=tq, t_v=tv, t_o=to, blocks=1)).data
        block_err = max(block_err, float(np.max(np.abs(got - full_core_bilinear(qt, vt, core)))))

    count_ok = True
    for _ in range(50):
        blocks = int(rng.integers(1, 4))
        t = [blocks * int(rng.integers(1, 4)) for _ in range(3)]
        fc = FusionConfig(kind=str(rng.choice(FUSION_KINDS)), d_q=int(rng.integers(1, 9)),
                          d_v=int(rng.integers(1, 9)), d_out=int(rng.integers(1, 9)), c=int(rng.integers(1, 9)),
                          t_q=t[0], t_v=t[1], t_o=t[2], rank=int(rng.integers(1, 4)), blocks=blocks)
        enumerated = sum(p.data.size for p in init_fusion(ParamStore(), "f", fc).values())
        count_ok &= param_count(fc) == enumerated == count_tensors(d for _, d, _ in _shapes(fc))

    ok = qaa_ok and iqaa_ok and block_err <= 1e-12 and count_ok
    acceptance(4, "structural reductions", ok,
               f"qaa==sg {qaa_ok}, iqaa(0)==sg {iqaa_ok}, block B=1 err {block_err:.1e}, param counts {count_ok}")
    assert ok


def test_5_prior_properties(acceptance):
    rng = np.random.default_rng(11)
    grid = GridSpec(6, 6)
    monotone = invariant = True
    thetas = [round(0.1 * i, 1) for i in range(11)]
    for _ in range(25):
        maps = [ObjectMap(grid, (rng.random(grid.g) < rng.random()).astype(np.uint8))
                for _ in range(int(rng.integers(1, 40)))]
        counts = accumulate_counts(maps, grid)
        shuffled = [maps[i] for i in rng.permutation(len(maps))]
        invariant &= counts.counts.tolist() == accumulate_counts(shuffled, grid).counts.tolist()
        selected = [k for _, k in threshold_sweep(normalize_counts(counts), grid, thetas)]
        monotone &= all(b <= a for a, b in zip(selected, selected[1:]))
    ok = monotone and invariant
    acceptance(5, "prior properties", ok, f"monotone sweep {monotone}, order invariance {invariant}")
    assert ok


# chosen so that count/presence questions need object evidence the noisy features blur
A6_DATA = dict(seed=0, noise=0.7, d_v=8)
A6_MODEL = dict(fusion="linear", fusion_hidden=16, d_q=32, embed_dim=16, lr=1e-2, epochs=60, attention=False)


def _count_presence(result):
    recs = [r for r in result.records if r.qtype in ("count", "presence")]
    return 100.0 * float(np.mean([r.accuracy for r in recs]))


@pytest.mark.slow
def test_6_directional_qaa_gain(acceptance):
    start = time.perf_counter()
    train = build_split("train", 2000, **A6_DATA)
    val = build_split("val", 500, **A6_DATA)
    y = [r.answer for r in train]
    outcomes, rows = [], []
    for seed in range(3):
        scores = {}
        for branches in (("sg",), ("qaa",), ("sg", "qaa")):
            model = QAAClassifier(branches=branches, random_state=seed, **A6_MODEL).fit(train, y)
            result = evaluate(list(model.predict(val)), val)
            scores[branches] = (result.accuracy, _count_presence(result))
        sg, qaa, both = scores[("sg",)], scores[("qaa",)], scores[("sg", "qaa")]
        gain_ok = both[1] - sg[1] >= 5.0
        slack_ok = both[0] >= max(sg[0], qaa[0]) - 1.0
        outcomes.append(gain_ok and slack_ok)
        rows.append(f"seed {seed}: count+presence gain {both[1] - sg[1]:+.1f}, "
                    f"overall sg {sg[0]:.1f} qaa {qaa[0]:.1f} sg+qaa {both[0]:.1f}")
    elapsed = time.perf_counter() - start
    ok = all(outcomes) and elapsed < 600
    acceptance(6, "directional QAA gain", ok, "; ".join(rows) + f"; {elapsed:.0f}s")
    assert ok


def test_7_memorization_sanity(acceptance):
    records = build_split("train", 60, seed=5, grid=GridSpec(4, 4), noise=0.1)[:2]
    y = ["3", "yes"]
    model = QAAClassifier(epochs=200, lr=1e-2, batch_size=2, fusion_hidden=8, d_q=8, embed_dim=6).fit(records, y)
    train_acc = float(np.mean(model.predict(records) == np.array(y)))
    final = model.loss_curve_[-1]

    balanced = build_split("train", 400, seed=2)
    fresh = QAAClassifier(epochs=0, fusion_hidden=8, d_q=8, embed_dim=6).fit(balanced, [r.answer for r in balanced])
    k = len(fresh.answers_)
    rel = abs(fresh.loss_curve_[0] - math.log(k)) / math.log(k)
    ok = train_acc == 1.0 and final < 0.05 and rel <= 0.10
    acceptance(7, "memorization sanity", ok,
               f"train accuracy {train_acc:.0%}, final loss {final:.4f}, epoch-0 loss off ln|D| by {rel:.1%}")
    assert ok


CONFIG = {
    "data": {"seed": 0, "n_train": 500, "n_val": 200, "grid": "7x7", "d_v": 8, "noise": 0.3},
    "model": {"branches": ["sg", "qaa"], "d_q": 16, "embed_dim": 8, "fusion": {"kind": "linear", "c": 8}},
    "optim": {"kind": "adam", "lr": 0.01, "epochs": 5, "batch": 32, "seed": 0},
}


def _pipeline(root):
    root.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(CONFIG))
    codes = [
        run_command(["gen-data", "--config", str(cfg), "--out", str(root / "data")]),
        run_command(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "m.qtns")]),
        run_command(["eval", "--model", str(root / "m.qtns"), "--data", str(root / "data"),
                     "--csv", str(root / "r.csv"), "--svg", str(root / "r.svg")]),
    ]
    return codes, (root / "r.csv").read_bytes()


def test_8_determinism(tmp_path, acceptance):
    codes_a, csv_a = _pipeline(tmp_path / "a")
    codes_b, csv_b = _pipeline(tmp_path / "b")
    ok = codes_a == codes_b == [0, 0, 0] and csv_a == csv_b
    acceptance(8, "determinism", ok, f"exit codes {codes_a} / {codes_b}, CSV identical {csv_a == csv_b}")
    assert ok
