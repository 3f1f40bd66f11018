"""Visual feature grids and question-agnostic masking."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .object_map import GridSpec, ObjectMap
from .qtns import read_tensor, write_tensor

__all__ = ["FeatureGrid", "apply_object_map", "mask_features", "load_feature_grid", "save_feature_grid"]


@dataclass
class FeatureGrid:
    grid: GridSpec
    values: np.ndarray
    masked: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.g:
            raise ShapeError(
                f"feature grid needs dims [{self.grid.g}, d_v], got {list(self.values.shape)}"
            )

    @property
    def d_v(self) -> int:
        return self.values.shape[1]


def apply_object_map(features: FeatureGrid, object_map: ObjectMap) -> FeatureGrid:
    """Zero every feature row whose cell is not marked in ``object_map``."""
    if features.grid != object_map.grid:
        raise ShapeError(f"grid mismatch: features {features.grid} vs map {object_map.grid}")
    if features.masked:
        warnings.warn("feature grid is already masked", stacklevel=2)
    values = features.values * object_map.bits[:, None]
    return FeatureGrid(features.grid, values, masked=True)


def mask_features(features: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Batched masking: ``[N, g, d_v] * [N, g] -> [N, g, d_v]``.

    A single ``[g]`` map is applied to every record; a single ``[g, d_v]``
    grid takes a ``[g]`` map.
    """
    features = np.asarray(features, dtype=np.float64)
    maps = np.asarray(maps)
    if features.ndim == 2:
        if maps.shape != features.shape[:1]:
            raise ShapeError(f"map dims {list(maps.shape)} do not match features {list(features.shape)}")
        return features * maps[:, None]
    if maps.ndim == 1:
        maps = np.broadcast_to(maps, features.shape[:2])
    if maps.shape != features.shape[:2]:
        raise ShapeError(f"maps dims {list(maps.shape)} do not match features {list(features.shape)}")
    return features * maps[..., None]


def load_feature_grid(path, grid: GridSpec) -> FeatureGrid:
    arr = read_tensor(path)
    if arr.ndim != 2:
        raise ShapeError(f"feature tensor must have 2 dims, got {arr.ndim}")
    if arr.shape[0] != grid.g:
        raise ShapeError(f"feature tensor has {arr.shape[0]} rows, grid needs {grid.g}")
    return FeatureGrid(grid, arr.astype(np.float64))


def save_feature_grid(path, features: FeatureGrid) -> None:
    write_tensor(path, features.values)
