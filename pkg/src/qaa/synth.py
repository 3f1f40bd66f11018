"""Deterministic grid-world VQA data: scenes, features, masks and questions.

A scene is a small image with up to six non-overlapping coloured squares and
discs.  Features are rendered per grid cell, instance masks are exact
object bitmaps, and four question templates are answered from geometry.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, QAAError
from .features import FeatureGrid
from .object_map import GridSpec, InstanceMask, ObjectMap, rasterize_instances
from .qtns import read_tensor, write_tensor

logger = logging.getLogger(__name__)

COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("square", "disc")
PLURAL = {"square": "squares", "disc": "discs"}
QTYPES = ("count", "presence", "color", "position")
DIRECTIONS = ("left", "right", "top", "bottom")
VOCAB = (
    ("<pad>", "how", "many", "is", "there", "a", "what", "color", "the", "where")
    + SHAPES
    + tuple(PLURAL.values())
    + COLORS
)
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}
ANSWERS = tuple(str(i) for i in range(7)) + ("yes", "no") + COLORS + DIRECTIONS
N_CONSENSUS = 10

__all__ = [
    "SceneObject",
    "Scene",
    "QARecord",
    "generate_scene",
    "render_features",
    "generate_questions",
    "build_split",
    "write_dataset",
    "read_split",
    "read_manifest",
    "tokenize",
]


@dataclass
class SceneObject:
    shape: str
    color: int
    bbox: tuple[int, int, int, int]  # r0, c0, r1, c1 (exclusive)
    bitmap: np.ndarray = field(repr=False)

    @property
    def color_name(self) -> str:
        return COLORS[self.color]

    def centroid(self) -> tuple[float, float]:
        rr, cc = np.nonzero(self.bitmap)
        return float(rr.mean()) + 0.5, float(cc.mean()) + 0.5


@dataclass
class Scene:
    height: int
    width: int
    objects: list[SceneObject]

    def masks(self, image_id: str = "") -> list[InstanceMask]:
        return [InstanceMask.from_bitmap(o.bitmap, 1.0, image_id) for o in self.objects]


def _shape_bitmap(shape: str, height: int, width: int, r0: int, c0: int, size: int) -> np.ndarray:
    bitmap = np.zeros((height, width), dtype=bool)
    if shape == "square":
        bitmap[r0 : r0 + size, c0 : c0 + size] = True
        return bitmap
    rr, cc = np.mgrid[0:size, 0:size] + 0.5
    radius = size / 2
    disc = (rr - radius) ** 2 + (cc - radius) ** 2 <= radius**2
    bitmap[r0 : r0 + size, c0 : c0 + size] = disc
    return bitmap


def make_object(shape: str, color: int, r0: int, c0: int, size: int, height: int = 56, width: int = 56) -> SceneObject:
    return SceneObject(shape, color, (r0, c0, r0 + size, c0 + size),
                       _shape_bitmap(shape, height, width, r0, c0, size))


def _overlaps(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def generate_scene(
    seed: int,
    index: int,
    height: int = 56,
    width: int = 56,
    max_objects: int = 6,
    size_range: tuple[int, int] = (8, 16),
) -> Scene:
    """Deterministic scene for ``(seed, index)``; object count uniform in 0..max_objects."""
    lo, hi = size_range
    if hi > min(height, width) or lo < 1:
        raise ConfigError(f"object sizes {size_range} do not fit a {height}x{width} image")
    attempt = 0
    while True:
        rng = np.random.default_rng([seed, index, attempt])
        n = int(rng.integers(0, max_objects + 1))
        objects: list[SceneObject] = []
        for _ in range(n):
            for _try in range(100):
                size = int(rng.integers(lo, hi + 1))
                r0 = int(rng.integers(0, height - size + 1))
                c0 = int(rng.integers(0, width - size + 1))
                box = (r0, c0, r0 + size, c0 + size)
                if not any(_overlaps(box, o.bbox) for o in objects):
                    break
            else:
                break
            shape = SHAPES[int(rng.integers(len(SHAPES)))]
            color = int(rng.integers(len(COLORS)))
            objects.append(make_object(shape, color, r0, c0, size, height, width))
        if len(objects) == n:
            return Scene(height, width, objects)
        attempt += 1
        logger.info("scene (%d, %d): placement failed, retrying with sub-seed %d", seed, index, attempt)


def render_features(
    scene: Scene,
    grid: GridSpec = GridSpec(),
    d_v: int = 16,
    noise_sigma: float = 0.05,
    rng: np.random.Generator | None = None,
) -> FeatureGrid:
    """Per-cell one-hot(colour) + one-hot(shape) + coverage of the dominant object, plus noise.

    The dominant object is the one covering most pixels of the cell (lowest
    index on ties); empty cells carry noise only.
    """
    n_colors, n_shapes = len(COLORS), len(SHAPES)
    if d_v < n_colors + n_shapes + 1:
        raise ConfigError(f"d_v={d_v} too small, need at least {n_colors + n_shapes + 1}")
    values = np.zeros((grid.g, d_v))
    if scene.objects:
        r = np.arange(scene.height) * grid.rows // scene.height
        c = np.arange(scene.width) * grid.cols // scene.width
        cells = (r[:, None] * grid.cols + c[None, :]).reshape(-1)
        cell_pixels = np.bincount(cells, minlength=grid.g)
        cover = np.stack([
            np.bincount(cells, weights=o.bitmap.reshape(-1), minlength=grid.g) for o in scene.objects
        ])
        best = cover.argmax(axis=0)
        for cell in np.flatnonzero(cover.max(axis=0) > 0):
            obj = scene.objects[best[cell]]
            values[cell, obj.color] = 1.0
            values[cell, n_colors + SHAPES.index(obj.shape)] = 1.0
            values[cell, n_colors + n_shapes] = cover[best[cell], cell] / cell_pixels[cell]
    if noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        values += rng.normal(0.0, noise_sigma, size=values.shape)
    return FeatureGrid(grid, values)


def tokenize(words: Sequence[str]) -> list[int]:
    return [TOKEN_ID[w] for w in words]


def _position(obj: SceneObject, height: int, width: int) -> str:
    # dominant axis of the centroid offset from the image centre
    cy, cx = obj.centroid()
    dy, dx = cy - height / 2, cx - width / 2
    if abs(dx) >= abs(dy):
        return "left" if dx < 0 else "right"
    return "top" if dy < 0 else "bottom"


def generate_questions(scene: Scene, seed: int, index: int = 0, qtypes: Sequence[str] = QTYPES) -> list[dict]:
    """One question per applicable template, as ``{"qtype", "question", "answer"}``."""
    rng = np.random.default_rng([seed, index, 1 << 20])
    objs = scene.objects
    out = []
    if "count" in qtypes:
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        n = sum(o.shape == shape for o in objs)
        out.append({"qtype": "count", "question": tokenize(["how", "many", PLURAL[shape]]), "answer": str(n)})
    if "presence" in qtypes:
        if objs and rng.random() < 0.5:
            pick = objs[int(rng.integers(len(objs)))]
            shape, color = pick.shape, pick.color
        else:
            shape, color = SHAPES[int(rng.integers(len(SHAPES)))], int(rng.integers(len(COLORS)))
        found = any(o.shape == shape and o.color == color for o in objs)
        out.append({"qtype": "presence",
                    "question": tokenize(["is", "there", "a", COLORS[color], shape]),
                    "answer": "yes" if found else "no"})
    if "color" in qtypes:
        shape_counts = Counter(o.shape for o in objs)
        unique = [s for s in SHAPES if shape_counts[s] == 1]
        if unique:
            shape = unique[int(rng.integers(len(unique)))]
            obj = next(o for o in objs if o.shape == shape)
            out.append({"qtype": "color", "question": tokenize(["what", "color", "is", "the", shape]),
                        "answer": obj.color_name})
    if "position" in qtypes:
        kinds = Counter((o.shape, o.color) for o in objs)
        unique = [o for o in objs if kinds[(o.shape, o.color)] == 1]
        if unique:
            obj = unique[int(rng.integers(len(unique)))]
            out.append({"qtype": "position",
                        "question": tokenize(["where", "is", "the", obj.color_name, obj.shape]),
                        "answer": _position(obj, scene.height, scene.width)})
    return out


@dataclass
class QARecord:
    id: str
    grid: GridSpec
    features_path: str
    features: np.ndarray = field(repr=False)
    masks: list[InstanceMask] = field(repr=False)
    object_map: ObjectMap = field(repr=False)
    question: list[int]
    qtype: str
    answers: list[str]

    @property
    def answer(self) -> str:
        return self.answers[0]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "grid": [self.grid.rows, self.grid.cols],
            "features": self.features_path,
            "runs_per_instance": [{"runs": list(m.runs), "score": m.confidence} for m in self.masks],
            "object_map": self.object_map.bits.tolist(),
            "question": list(self.question),
            "qtype": self.qtype,
            "answers": list(self.answers),
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, QARecord):
            return NotImplemented
        return (self.to_json() == other.to_json()
                and np.array_equal(self.features, other.features))


def detect(scene: Scene, recall: float, rng: np.random.Generator, image_id: str = "") -> list[InstanceMask]:
    """Instance masks a detector with the given recall would report for ``scene``."""
    if recall >= 1.0:
        return scene.masks(image_id)
    out = []
    for obj in scene.objects:
        hit = rng.random() < recall
        score = float(np.float32(0.5 + 0.5 * rng.random()))
        if hit:
            out.append(InstanceMask.from_bitmap(obj.bitmap, score, image_id))
    return out


SPLIT_OFFSET = {"train": 0, "val": 1_000_000}


def build_split(
    split: str,
    n_records: int,
    seed: int = 0,
    image: tuple[int, int] = (56, 56),
    grid: GridSpec = GridSpec(),
    d_v: int = 16,
    noise: float = 0.05,
    recall: float = 1.0,
) -> list[QARecord]:
    """Generate scenes until ``n_records`` questions exist (the last scene may be cut).

    ``recall`` simulates an imperfect instance segmenter: each object's mask
    is reported independently with that probability, with a score in
    [0.5, 1).  Questions and features always use the full scene.
    """
    if split not in SPLIT_OFFSET:
        raise ConfigError(f"unknown split {split!r}")
    if not 0.0 <= recall <= 1.0:
        raise ConfigError(f"recall {recall} outside [0, 1]")
    h, w = image
    records: list[QARecord] = []
    index = SPLIT_OFFSET[split]
    while len(records) < n_records:
        scene = generate_scene(seed, index, h, w)
        feats = render_features(scene, grid, d_v, noise, np.random.default_rng([seed, index, 2]))
        # stored as float32 on disk; keep the in-memory copy identical
        values = feats.values.astype(np.float32).astype(np.float64)
        scene_id = f"{split}_{index - SPLIT_OFFSET[split]:06d}"
        masks = detect(scene, recall, np.random.default_rng([seed, index, 3]), scene_id)
        omap = rasterize_instances(masks, grid, 0.0, 0.0)
        for k, qa in enumerate(generate_questions(scene, seed, index)):
            if len(records) == n_records:
                break
            records.append(QARecord(
                id=f"{scene_id}_{k}", grid=grid, features_path=f"features/{scene_id}.qtns",
                features=values, masks=masks, object_map=omap, question=qa["question"],
                qtype=qa["qtype"], answers=[qa["answer"]] * N_CONSENSUS,
            ))
        index += 1
    return records


def write_dataset(
    splits: dict[str, list[QARecord]], directory, image: tuple[int, int] = (56, 56), meta: dict | None = None
) -> dict:
    """Write ``<split>.jsonl`` files, QTNS features and ``manifest.json``; return the manifest."""
    root = Path(directory)
    try:
        (root / "features").mkdir(parents=True, exist_ok=True)
        manifest = dict(meta or {})
        manifest["image"] = list(image)
        manifest["vocab"] = list(VOCAB)
        manifest["answers"] = list(ANSWERS)
        manifest["splits"] = {}
        for split, records in splits.items():
            written = set()
            with open(root / f"{split}.jsonl", "w", encoding="utf-8") as fh:
                for rec in records:
                    if rec.features_path not in written:
                        write_tensor(root / rec.features_path, rec.features)
                        written.add(rec.features_path)
                    fh.write(json.dumps(rec.to_json()) + "\n")
            counts = Counter(r.qtype for r in records)
            manifest["splits"][split] = {"records": len(records),
                                         "qtypes": {t: counts[t] for t in QTYPES}}
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise QAAError(f"cannot write dataset to {exc.filename or root}: {exc.strerror}") from None
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise QAAError(f"cannot read {path}: {exc.strerror}") from None


def read_split(directory, split: str) -> list[QARecord]:
    root = Path(directory)
    manifest = read_manifest(root)
    h, w = manifest["image"]
    cache: dict[str, np.ndarray] = {}
    records = []
    with open(root / f"{split}.jsonl", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            grid = GridSpec(*obj["grid"])
            path = obj["features"]
            if path not in cache:
                cache[path] = read_tensor(root / path).astype(np.float64)
            masks = [InstanceMask(h, w, inst["runs"], inst["score"], obj["id"])
                     for inst in obj["runs_per_instance"]]
            records.append(QARecord(
                id=obj["id"], grid=grid, features_path=path, features=cache[path], masks=masks,
                object_map=ObjectMap(grid, np.asarray(obj["object_map"])), question=obj["question"],
                qtype=obj["qtype"], answers=obj["answers"],
            ))
    return records
