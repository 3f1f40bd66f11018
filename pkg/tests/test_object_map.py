import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_rasterize

from qaa.exceptions import DomainError, ParseError, ShapeError
from qaa.object_map import (
    GridSpec,
    InstanceMask,
    ObjectMap,
    ObjectMapRasterizer,
    decode_rle,
    encode_rle,
    load_masks,
    rasterize_instances,
    read_maps,
    union,
    write_maps,
)


def mask_from_pixels(h, w, pixels, score=1.0):
    bm = np.zeros((h, w), dtype=bool)
    for r, c in pixels:
        bm[r, c] = True
    return InstanceMask.from_bitmap(bm, score)


@st.composite
def mask_cases(draw, max_side=16, max_masks=3):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    rows = draw(st.integers(1, min(h, 8)))
    cols = draw(st.integers(1, min(w, 8)))
    masks = []
    for _ in range(draw(st.integers(0, max_masks))):
        bits = draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
        bm = np.array(bits).reshape(h, w)
        if not bm.any():
            bm[0, 0] = True
        masks.append(InstanceMask.from_bitmap(bm, draw(st.sampled_from([0.2, 0.5, 0.9, 1.0]))))
    return h, w, GridSpec(rows, cols), masks


# -- RLE ------------------------------------------------------------------

def test_rle_starts_with_zero_run():
    assert encode_rle([[1, 1], [0, 1]]) == [0, 2, 1, 1]
    assert encode_rle([[0, 0], [0, 0]]) == [4]


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_rle_round_trip(h, w, data):
    bits = np.array(data.draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))).reshape(h, w)
    assert np.array_equal(decode_rle(encode_rle(bits), h, w), bits)


def test_rle_bad_sum_is_parse_error():
    with pytest.raises(ParseError):
        decode_rle([3, 2], 2, 2)


def test_positive_confidence_needs_a_pixel():
    with pytest.raises(ParseError):
        InstanceMask(2, 2, [4], 0.9)
    InstanceMask(2, 2, [4], 0.0)


# -- rasterize ------------------------------------------------------------

def test_no_masks_gives_zero_map():
    assert rasterize_instances([], GridSpec(4, 4)) == ObjectMap.zeros(GridSpec(4, 4))


def test_full_mask_gives_ones():
    m = InstanceMask(8, 8, [0, 64], 1.0)
    assert rasterize_instances([m], GridSpec(4, 4), 0.0) == ObjectMap.ones(GridSpec(4, 4))


def test_two_pixel_example():
    m = mask_from_pixels(8, 8, [(0, 0), (5, 4)])
    bits = rasterize_instances([m], GridSpec(4, 4), 0.0).bits
    assert np.flatnonzero(bits).tolist() == [0, 10]


def test_low_confidence_masks_are_ignored():
    m = mask_from_pixels(8, 8, [(0, 0)], score=0.3)
    assert rasterize_instances([m], GridSpec(2, 2)).selected == 0
    assert rasterize_instances([m], GridSpec(2, 2), min_confidence=0.3).selected == 1


def test_occupancy_fraction_is_strict():
    # 2x2 cell with exactly half its pixels covered
    m = mask_from_pixels(4, 4, [(0, 0), (0, 1)])
    grid = GridSpec(2, 2)
    assert rasterize_instances([m], grid, 0.5).selected == 0
    assert rasterize_instances([m], grid, 0.49).selected == 1


def test_mismatched_dims_and_bad_tau():
    a, b = mask_from_pixels(4, 4, [(0, 0)]), mask_from_pixels(4, 5, [(0, 0)])
    with pytest.raises(DomainError):
        rasterize_instances([a, b], GridSpec(2, 2))
    with pytest.raises(DomainError):
        rasterize_instances([a], GridSpec(2, 2), 1.5)


@settings(max_examples=80, deadline=None)
@given(mask_cases(), st.sampled_from([0.0, 0.25, 0.5, 0.75]))
def test_rasterize_matches_brute_force(case, tau):
    h, w, grid, masks = case
    expected = brute_force_rasterize([(m.runs, m.confidence) for m in masks], h, w, grid.rows, grid.cols, tau)
    if not masks:
        expected = [0] * grid.g
    assert rasterize_instances(masks, grid, tau).bits.tolist() == expected


@settings(max_examples=50, deadline=None)
@given(mask_cases(), st.sampled_from([0.0, 0.3, 0.6]))
def test_adding_a_mask_never_clears_a_bit(case, tau):
    _, _, grid, masks = case
    prev = np.zeros(grid.g, dtype=np.uint8)
    for k in range(1, len(masks) + 1):
        bits = rasterize_instances(masks[:k], grid, tau).bits
        assert np.all(bits >= prev)
        prev = bits


@settings(max_examples=50, deadline=None)
@given(mask_cases())
def test_raising_tau_never_sets_a_bit(case):
    _, _, grid, masks = case
    sweeps = [rasterize_instances(masks, grid, t).bits for t in np.linspace(0, 1, 6)]
    for lo, hi in zip(sweeps, sweeps[1:]):
        assert np.all(hi <= lo)


# -- IO -------------------------------------------------------------------

def test_load_masks_empty_file(tmp_path):
    p = tmp_path / "m.jsonl"
    p.write_text("")
    assert load_masks(p) == []


def test_load_masks_preserves_order_and_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    good = {"image_id": "a", "h": 2, "w": 2, "runs": [1, 3], "score": 0.8}
    bad = {"image_id": "b", "h": 2, "w": 2, "runs": [1, 2], "score": 0.8}
    p.write_text(json.dumps(good) + "\n")
    masks = load_masks(p)
    assert len(masks) == 1 and sum(masks[0].runs) == 4 and masks[0].confidence == 0.8
    p.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(ParseError, match="line 2"):
        load_masks(p)
    p.write_text("{not json\n")
    with pytest.raises(ParseError, match="line 1"):
        load_masks(p)


def test_maps_jsonl_round_trip(tmp_path):
    grid = GridSpec(2, 3)
    maps = [ObjectMap(grid, [1, 0, 0, 1, 1, 0]), ObjectMap.zeros(grid)]
    write_maps(tmp_path / "maps.jsonl", maps)
    assert read_maps(tmp_path / "maps.jsonl") == maps
    assert json.loads((tmp_path / "maps.jsonl").read_text().splitlines()[0]) == {
        "rows": 2, "cols": 3, "bits": [1, 0, 0, 1, 1, 0]}


# -- union ----------------------------------------------------------------

def test_union_examples():
    grid = GridSpec(1, 2)
    m = ObjectMap(grid, [1, 0])
    assert union([m, ObjectMap.zeros(grid)]) == m
    assert union([m, ObjectMap.ones(grid)]) == ObjectMap.ones(grid)
    assert union([ObjectMap(grid, [1, 0]), ObjectMap(grid, [0, 1])]).bits.tolist() == [1, 1]


def test_union_grid_mismatch():
    with pytest.raises(ShapeError):
        union([ObjectMap.zeros(GridSpec(1, 2)), ObjectMap.zeros(GridSpec(2, 1))])


@given(st.lists(st.integers(0, 1), min_size=6, max_size=6))
def test_union_idempotent(bits):
    m = ObjectMap(GridSpec(2, 3), bits)
    assert union([m, m]) == m


# -- estimator wrapper ----------------------------------------------------

def test_rasterizer_transformer_matches_function():
    images = [[mask_from_pixels(8, 8, [(0, 0), (7, 7)])], [], [mask_from_pixels(8, 8, [(3, 3)], 0.4)]]
    est = ObjectMapRasterizer(grid=(4, 4))
    out = est.fit_transform(images)
    assert out.shape == (3, 16)
    for row, masks in zip(out, images):
        assert row.tolist() == rasterize_instances(masks, GridSpec(4, 4)).bits.tolist()
    assert est.get_params()["min_confidence"] == 0.5
