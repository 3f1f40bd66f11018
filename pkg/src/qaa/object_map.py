"""Instance masks and their rasterization into binary grid object maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DomainError, ParseError, ShapeError

__all__ = [
    "GridSpec",
    "InstanceMask",
    "ObjectMap",
    "encode_rle",
    "decode_rle",
    "rasterize_instances",
    "load_masks",
    "union",
    "ObjectMapRasterizer",
]


@dataclass(frozen=True)
class GridSpec:
    rows: int = 14
    cols: int = 14

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"grid dims must be positive, got {self.rows}x{self.cols}")

    @property
    def g(self) -> int:
        return self.rows * self.cols

    @classmethod
    def parse(cls, text: str) -> "GridSpec":
        """Parse ``"14x14"``."""
        try:
            r, c = text.lower().split("x")
            return cls(int(r), int(c))
        except ValueError:
            raise DomainError(f"grid must look like RxC, got {text!r}") from None


def encode_rle(bitmap) -> list[int]:
    """Row-major run lengths, alternating 0-run/1-run, starting with a 0-run."""
    flat = np.asarray(bitmap, dtype=bool).reshape(-1)
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return runs


def decode_rle(runs: Sequence[int], height: int, width: int) -> np.ndarray:
    runs = [int(r) for r in runs]
    if any(r < 0 for r in runs):
        raise ParseError("negative run length")
    if sum(runs) != height * width:
        raise ParseError(f"run lengths sum to {sum(runs)}, expected {height}x{width}={height * width}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(height, width)


@dataclass
class InstanceMask:
    height: int
    width: int
    runs: list[int]
    confidence: float = 1.0
    image_id: str = ""
    _bitmap: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ParseError(f"confidence {self.confidence} outside [0, 1]")
        bitmap = decode_rle(self.runs, self.height, self.width)
        if self.confidence > 0 and not bitmap.any():
            raise ParseError("mask with positive confidence has no foreground pixels")
        self._bitmap = bitmap

    @property
    def bitmap(self) -> np.ndarray:
        return self._bitmap

    @classmethod
    def from_bitmap(cls, bitmap, confidence: float = 1.0, image_id: str = "") -> "InstanceMask":
        bitmap = np.asarray(bitmap, dtype=bool)
        h, w = bitmap.shape
        return cls(h, w, encode_rle(bitmap), confidence, image_id)

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "h": self.height, "w": self.width,
                "runs": list(self.runs), "score": self.confidence}


@dataclass
class ObjectMap:
    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.shape != (self.grid.g,):
            raise ShapeError(f"object map needs {self.grid.g} bits, got dims {list(bits.shape)}")
        if not np.isin(bits, (0, 1)).all():
            raise DomainError("object map bits must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ObjectMap":
        return cls(grid, np.zeros(grid.g, dtype=np.uint8))

    @classmethod
    def ones(cls, grid: GridSpec) -> "ObjectMap":
        return cls(grid, np.ones(grid.g, dtype=np.uint8))

    @property
    def selected(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return (isinstance(other, ObjectMap) and self.grid == other.grid
                and np.array_equal(self.bits, other.bits))

    def to_json(self) -> dict:
        return {"rows": self.grid.rows, "cols": self.grid.cols, "bits": self.bits.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ObjectMap":
        try:
            return cls(GridSpec(int(obj["rows"]), int(obj["cols"])), np.asarray(obj["bits"]))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad ObjectMap JSON: {exc}") from None


def _cell_index(height: int, width: int, grid: GridSpec) -> np.ndarray:
    # pixel (r, c) -> cell (floor(r*rows/H), floor(c*cols/W))
    r = np.arange(height) * grid.rows // height
    c = np.arange(width) * grid.cols // width
    return (r[:, None] * grid.cols + c[None, :]).reshape(-1)


def rasterize_instances(
    masks: Sequence[InstanceMask],
    grid: GridSpec = GridSpec(),
    occupancy_fraction: float = 0.0,
    min_confidence: float = 0.5,
) -> ObjectMap:
    """Mark every cell whose covered pixel fraction exceeds ``occupancy_fraction``.

    Masks scoring below ``min_confidence`` are dropped and the rest are
    unioned before coverage is measured.
    """
    if not 0.0 <= occupancy_fraction <= 1.0:
        raise DomainError(f"occupancy fraction {occupancy_fraction} outside [0, 1]")
    if not masks:
        return ObjectMap.zeros(grid)
    h, w = masks[0].height, masks[0].width
    for m in masks:
        if (m.height, m.width) != (h, w):
            raise DomainError(f"mask dims {m.height}x{m.width} differ from {h}x{w}")
    if grid.rows > h or grid.cols > w:
        raise DomainError(f"grid {grid.rows}x{grid.cols} finer than image {h}x{w}")

    covered = np.zeros((h, w), dtype=bool)
    for m in masks:
        if m.confidence >= min_confidence:
            covered |= m.bitmap
    cells = _cell_index(h, w, grid)
    total = np.bincount(cells, minlength=grid.g)
    hit = np.bincount(cells, weights=covered.reshape(-1), minlength=grid.g)
    return ObjectMap(grid, (hit > occupancy_fraction * total).astype(np.uint8))


def parse_mask_line(line: str, lineno: int = 1) -> InstanceMask:
    try:
        obj = json.loads(line)
        return InstanceMask(int(obj["h"]), int(obj["w"]), list(obj["runs"]),
                            float(obj.get("score", 1.0)), str(obj.get("image_id", "")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {lineno}: {exc}") from None


def load_masks(path) -> list[InstanceMask]:
    """Read a JSON Lines mask file, preserving order."""
    masks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                masks.append(parse_mask_line(line, lineno))
    return masks


def union(maps: Sequence[ObjectMap]) -> ObjectMap:
    if not maps:
        raise DomainError("union of an empty list")
    grid = maps[0].grid
    bits = np.zeros(grid.g, dtype=np.uint8)
    for m in maps:
        if m.grid != grid:
            raise ShapeError(f"grid mismatch: {m.grid} vs {grid}")
        bits |= m.bits
    return ObjectMap(grid, bits)


class ObjectMapRasterizer(TransformerMixin, BaseEstimator):
    """Transformer from per-image mask lists to an ``(n_images, g)`` bit array.

    Parameters
    ----------
    grid : tuple of int, default=(14, 14)
        Rows and columns of the spatial grid.
    occupancy_fraction : float, default=0.0
        A cell is set when strictly more than this fraction of its pixels is
        covered; ``0`` means any overlap.
    min_confidence : float, default=0.5
        Masks scoring below this are ignored.
    """

    def __init__(self, grid=(14, 14), occupancy_fraction=0.0, min_confidence=0.5):
        self.grid = grid
        self.occupancy_fraction = occupancy_fraction
        self.min_confidence = min_confidence

    def fit(self, X: Iterable[Sequence[InstanceMask]], y=None):
        self.grid_ = GridSpec(*self.grid)
        return self

    def transform(self, X: Iterable[Sequence[InstanceMask]]) -> np.ndarray:
        grid = GridSpec(*self.grid)
        rows = [rasterize_instances(list(masks), grid, self.occupancy_fraction,
                                    self.min_confidence).bits for masks in X]
        return np.stack(rows) if rows else np.zeros((0, grid.g), dtype=np.uint8)


def write_maps(path, maps: Iterable[ObjectMap]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for m in maps:
            fh.write(json.dumps(m.to_json()) + "\n")


def read_maps(path) -> list[ObjectMap]:
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ObjectMap.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
    return out
