"""Dataset-global object-presence prior (IQAA).

Object maps from a training set are tallied per cell, min-max normalized and
thresholded into one fixed object map shared by every image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, ParseError
from .features import mask_features
from .object_map import GridSpec, ObjectMap

__all__ = [
    "CountGrid",
    "accumulate_counts",
    "merge_counts",
    "normalize_counts",
    "threshold_to_map",
    "threshold_sweep",
    "IQAAPrior",
    "heatmap_svg",
]


@dataclass
class CountGrid:
    grid: GridSpec
    counts: np.ndarray
    images_seen: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.grid.g,):
            raise DomainError(f"count grid needs {self.grid.g} counts")
        if np.any(self.counts < 0) or np.any(self.counts > self.images_seen):
            raise DomainError("counts must lie in [0, images_seen]")

    def to_json(self) -> dict:
        return {"rows": self.grid.rows, "cols": self.grid.cols,
                "counts": self.counts.tolist(), "images_seen": self.images_seen}

    @classmethod
    def from_json(cls, obj: dict) -> "CountGrid":
        try:
            return cls(GridSpec(int(obj["rows"]), int(obj["cols"])),
                       np.asarray(obj["counts"]), int(obj["images_seen"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad CountGrid JSON: {exc}") from None


def accumulate_counts(maps: Iterable[ObjectMap], grid: GridSpec | None = None) -> CountGrid:
    """Count, per cell, how many maps have that cell set."""
    counts = None
    seen = 0
    for m in maps:
        if grid is None:
            grid = m.grid
        if m.grid != grid:
            raise DomainError(f"grid mismatch at map {seen}: {m.grid} vs {grid}")
        if counts is None:
            counts = np.zeros(grid.g, dtype=np.int64)
        counts += m.bits
        seen += 1
    grid = grid or GridSpec()
    if counts is None:
        counts = np.zeros(grid.g, dtype=np.int64)
    return CountGrid(grid, counts, seen)


def merge_counts(parts: Iterable[CountGrid]) -> CountGrid:
    """Elementwise sum of per-worker partial counts."""
    parts = list(parts)
    if not parts:
        raise DomainError("nothing to merge")
    grid = parts[0].grid
    if any(p.grid != grid for p in parts):
        raise DomainError("grid mismatch among partial counts")
    return CountGrid(grid, sum(p.counts for p in parts), sum(p.images_seen for p in parts))


def normalize_counts(c: CountGrid) -> np.ndarray:
    """Min-max scale counts to [0, 1]; a constant grid maps to all zeros."""
    if c.images_seen < 1:
        raise DomainError("cannot normalize a count grid built from zero images")
    lo, hi = c.counts.min(), c.counts.max()
    if hi == lo:
        return np.zeros(c.grid.g)
    return (c.counts - lo) / (hi - lo)


def threshold_to_map(normalized, grid: GridSpec, threshold: float) -> ObjectMap:
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold {threshold} outside [0, 1]")
    normalized = np.asarray(normalized, dtype=np.float64).reshape(-1)
    return ObjectMap(grid, (normalized >= threshold).astype(np.uint8))


def threshold_sweep(normalized, grid: GridSpec, thresholds: Iterable[float]) -> list[tuple[float, int]]:
    """Selected-cell count for each threshold."""
    return [(float(t), threshold_to_map(normalized, grid, t).selected) for t in thresholds]


class IQAAPrior(TransformerMixin, BaseEstimator):
    """Learn a fixed object map from training maps and mask features with it.

    ``fit`` takes object maps as an ``(n, g)`` bit array; ``transform`` takes
    feature grids as ``(n, g, d_v)`` and applies the same prior map to each.
    """

    def __init__(self, threshold=0.5, grid=(14, 14)):
        self.threshold = threshold
        self.grid = grid

    def fit(self, X, y=None):
        grid = GridSpec(*self.grid)
        bits = np.asarray(X)
        if bits.ndim != 2 or bits.shape[1] != grid.g:
            raise DomainError(f"expected maps of dims [n, {grid.g}], got {list(bits.shape)}")
        self.counts_ = accumulate_counts((ObjectMap(grid, b) for b in bits), grid)
        self.normalized_ = normalize_counts(self.counts_)
        self.object_map_ = threshold_to_map(self.normalized_, grid, self.threshold)
        return self

    def transform(self, X):
        check_is_fitted(self, "object_map_")
        return mask_features(X, self.object_map_.bits)


def heatmap_svg(values, grid: GridSpec, cell: int = 20, title: str = "") -> str:
    """Grayscale heatmap of values in [0, 1], one rect per cell."""
    values = np.asarray(values, dtype=np.float64).reshape(grid.rows, grid.cols)
    w, h = grid.cols * cell, grid.rows * cell + 24
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<text x="4" y="16" font-family="sans-serif" font-size="12">{_escape(title)}</text>',
    ]
    for r in range(grid.rows):
        for c in range(grid.cols):
            level = int(round(255 * (1.0 - float(np.clip(values[r, c], 0.0, 1.0)))))
            parts.append(
                f'<rect x="{c * cell}" y="{24 + r * cell}" width="{cell}" height="{cell}" '
                f'fill="rgb({level},{level},{level})"><title>{values[r, c]:.3f}</title></rect>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def read_count_grid(path) -> CountGrid:
    with open(path, encoding="utf-8") as fh:
        try:
            return CountGrid.from_json(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None
