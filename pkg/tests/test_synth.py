import json
from collections import Counter

import numpy as np
import pytest

from qaa.exceptions import ConfigError
from qaa.object_map import GridSpec, rasterize_instances
from qaa.synth import (
    ANSWERS,
    COLORS,
    SHAPES,
    VOCAB,
    Scene,
    build_split,
    generate_questions,
    generate_scene,
    make_object,
    read_manifest,
    read_split,
    render_features,
    write_dataset,
)

G = GridSpec(14, 14)


def words(tokens):
    return [VOCAB[t] for t in tokens]


def answer_from_geometry(scene, tokens):
    """Recompute an answer from the question words and raw object bitmaps."""
    w = words(tokens)
    objs = scene.objects
    if w[:2] == ["how", "many"]:
        shape = w[2][:-1]
        return str(sum(o.shape == shape for o in objs))
    if w[0] == "is":
        color, shape = w[3], w[4]
        return "yes" if any(o.shape == shape and COLORS[o.color] == color for o in objs) else "no"
    if w[0] == "what":
        (obj,) = [o for o in objs if o.shape == w[4]]
        return COLORS[obj.color]
    color, shape = w[3], w[4]
    (obj,) = [o for o in objs if o.shape == shape and COLORS[o.color] == color]
    rr, cc = np.nonzero(obj.bitmap)
    dy, dx = rr.mean() + 0.5 - scene.height / 2, cc.mean() + 0.5 - scene.width / 2
    if abs(dx) >= abs(dy):
        return "left" if dx < 0 else "right"
    return "top" if dy < 0 else "bottom"


# -- scenes ---------------------------------------------------------------

def test_scene_is_deterministic():
    a, b = generate_scene(42, 0), generate_scene(42, 0)
    assert [(o.shape, o.color, o.bbox) for o in a.objects] == [(o.shape, o.color, o.bbox) for o in b.objects]
    assert all(np.array_equal(x.bitmap, y.bitmap) for x, y in zip(a.objects, b.objects))


def test_object_counts_cover_zero_and_six_and_bitmaps_are_disjoint():
    counts = Counter()
    for i in range(1000):
        scene = generate_scene(0, i)
        counts[len(scene.objects)] += 1
        total = sum(o.bitmap.astype(int) for o in scene.objects) if scene.objects else np.zeros(1)
        assert total.max() <= 1
        for o in scene.objects:
            r0, c0, r1, c1 = o.bbox
            assert 0 <= r0 < r1 <= 56 and 0 <= c0 < c1 <= 56
    assert counts[0] > 0 and counts[6] > 0
    assert set(counts) <= set(range(7))


def test_sizes_that_cannot_fit_are_rejected():
    with pytest.raises(ConfigError):
        generate_scene(0, 0, height=8, width=8, size_range=(8, 16))


# -- rendering --------------------------------------------------------------

def test_empty_scene_renders_zero_without_noise():
    fg = render_features(Scene(56, 56, []), G, 16, 0.0)
    assert not fg.values.any()


def test_square_filling_one_cell_gives_one_row():
    obj = make_object("square", 2, 8, 12, 4)  # cell (2, 3) of a 14x14 grid over 56 px
    fg = render_features(Scene(56, 56, [obj]), G, 8, 0.0)
    nonzero = np.flatnonzero(np.abs(fg.values).sum(axis=1))
    assert nonzero.tolist() == [2 * 14 + 3]
    assert fg.values[nonzero[0]].tolist() == [0, 0, 1, 0, 1, 0, 1.0, 0]


def test_render_is_deterministic_and_checks_width():
    scene = generate_scene(3, 7)
    a = render_features(scene, G, 16, 0.0).values
    assert a.tobytes() == render_features(scene, G, 16, 0.0).values.tobytes()
    with pytest.raises(ConfigError):
        render_features(scene, G, len(COLORS) + len(SHAPES), 0.0)


def test_rasterized_map_equals_rendered_occupancy():
    for i in range(50):
        scene = generate_scene(1, i)
        occupied = np.abs(render_features(scene, G, 8, 0.0).values).sum(axis=1) > 0
        omap = rasterize_instances(scene.masks(), G, 0.0, 0.0)
        assert omap.bits.astype(bool).tolist() == occupied.tolist()


# -- questions --------------------------------------------------------------

def test_three_squares_counted():
    objs = [make_object("square", 0, 0, 0, 8), make_object("square", 1, 20, 20, 8),
            make_object("square", 3, 40, 40, 8)]
    scene = Scene(56, 56, objs)
    for seed in range(20):
        qa = {q["qtype"]: q for q in generate_questions(scene, seed)}
        if words(qa["count"]["question"])[2] == "squares":
            assert qa["count"]["answer"] == "3"
            break
    else:
        pytest.fail("never asked about squares")


def test_empty_scene_presence_is_no_and_unique_only_templates_skip():
    qs = generate_questions(Scene(56, 56, []), 0)
    assert {q["qtype"] for q in qs} == {"count", "presence"}
    presence = next(q for q in qs if q["qtype"] == "presence")
    assert presence["answer"] == "no"


def test_unique_disc_on_the_left():
    disc = make_object("disc", 1, 24, 2, 10)
    qs = generate_questions(Scene(56, 56, [disc]), 0)
    position = next(q for q in qs if q["qtype"] == "position")
    assert words(position["question"]) == ["where", "is", "the", "green", "disc"]
    assert position["answer"] == "left"


def test_answers_match_scene_geometry():
    for i in range(300):
        scene = generate_scene(9, i)
        for q in generate_questions(scene, 9, i):
            assert q["answer"] == answer_from_geometry(scene, q["question"])
            assert q["answer"] in ANSWERS


def test_split_records_are_consistent():
    records = build_split("train", 200, seed=4, grid=GridSpec(7, 7))
    assert len(records) == 200
    for rec in records:
        assert rec.answers == [rec.answer] * 10
        index = int(rec.id.split("_")[1])
        assert rec.answer == answer_from_geometry(generate_scene(4, index), rec.question)
    # train and val scenes never coincide
    val = build_split("val", 5, seed=4, grid=GridSpec(7, 7))
    assert {r.features_path for r in val}.isdisjoint(r.features_path for r in records)


def test_imperfect_recall_drops_masks():
    full = build_split("train", 300, seed=2, grid=GridSpec(7, 7))
    partial = build_split("train", 300, seed=2, grid=GridSpec(7, 7), recall=0.5)
    assert sum(len(r.masks) for r in partial) < sum(len(r.masks) for r in full)
    assert all(np.all(p.object_map.bits <= f.object_map.bits) for p, f in zip(partial, full))
    assert [r.answer for r in partial] == [r.answer for r in full]


# -- dataset files ------------------------------------------------------------

def test_dataset_round_trip_and_manifest(tmp_path):
    splits = {"train": build_split("train", 40, seed=1), "val": build_split("val", 10, seed=1)}
    manifest = write_dataset(splits, tmp_path)
    assert read_manifest(tmp_path) == json.loads(json.dumps(manifest))
    for split, records in splits.items():
        info = manifest["splits"][split]
        assert sum(info["qtypes"].values()) == info["records"] == len(records)
        assert read_split(tmp_path, split) == records
    line = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[0])
    assert set(line) == {"id", "grid", "features", "runs_per_instance", "object_map", "question", "qtype",
                         "answers"}
    assert len(line["answers"]) == 10


def test_regeneration_is_byte_identical(tmp_path):
    for out in ("a", "b"):
        write_dataset({"train": build_split("train", 30, seed=6)}, tmp_path / out)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
