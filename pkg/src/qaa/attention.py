"""Question-guided spatial attention over a feature grid, and plain mean pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from . import tensor as T
from .exceptions import DomainError, ShapeError
from .params import ParamStore
from .tensor import Tensor

__all__ = ["AttentionResult", "init_attention", "additive_scores", "spatial_attention", "pool_unattended"]

Scorer = Union[Mapping[str, Tensor], Callable[[Tensor, Tensor], Tensor]]


@dataclass
class AttentionResult:
    alpha: Tensor  # [N, g] (or [g])
    pooled: Tensor  # [N, d_v] (or [d_v])


def init_attention(store: ParamStore, prefix: str, d_q: int, d_v: int, dim: int = 32) -> dict[str, Tensor]:
    store.init(f"{prefix}.W_a", (d_q, dim))
    store.init(f"{prefix}.V_a", (d_v, dim))
    store.init(f"{prefix}.b_a", (dim,), "zeros")
    store.init(f"{prefix}.w", (dim, 1))
    return store.subset(prefix)


def additive_scores(q: Tensor, features: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """``w . tanh(W_a q + V_a v_i + b_a)`` for each cell: ``[N, g]``."""
    n, g, _ = features.shape
    qa = T.reshape(T.matmul(q, params["W_a"]), (n, 1, -1))
    h = T.tanh(T.add(T.add(T.matmul(features, params["V_a"]), qa), params["b_a"]))
    return T.reshape(T.matmul(h, params["w"]), (n, g))


def spatial_attention(q, features, scorer: Scorer) -> AttentionResult:
    """Softmax over the ``g`` cells of the scorer logits, then a weighted sum of rows.

    ``features`` is ``[g, d_v]`` or batched ``[N, g, d_v]`` (with ``q`` as
    ``[d_q]`` or ``[N, d_q]`` to match).  ``scorer`` is either a dict of
    additive-scorer parameters or a callable ``(q, features) -> [N, g]``.
    """
    q, feats = T._as_tensor(q), T._as_tensor(features)
    single = feats.data.ndim == 2
    if single:
        q = T.reshape(q, (1, -1))
        feats = T.reshape(feats, (1,) + feats.shape)
    if feats.data.ndim != 3:
        raise ShapeError(f"features must be [g, d_v] or [N, g, d_v], got {feats.dims}")
    n, g, d_v = feats.shape
    if g == 0:
        raise DomainError("attention over an empty grid")
    logits = scorer(q, feats) if callable(scorer) else additive_scores(q, feats, scorer)
    if logits.shape != (n, g):
        raise ShapeError(f"scorer returned dims {logits.dims}, expected [{n}, {g}]")
    alpha = T.softmax(logits, axis=-1)
    pooled = T.sum_axis(T.mul(T.reshape(alpha, (n, g, 1)), feats), axis=1)
    if single:
        return AttentionResult(T.reshape(alpha, (g,)), T.reshape(pooled, (d_v,)))
    return AttentionResult(alpha, pooled)


def pool_unattended(features) -> Tensor:
    """Arithmetic mean over the grid axis (second to last)."""
    feats = T._as_tensor(features)
    if feats.data.ndim < 2:
        raise ShapeError(f"features must have a grid axis, got dims {feats.dims}")
    return T.mean(feats, axis=feats.data.ndim - 2)


def uniform_scorer(q: Tensor, features: Tensor) -> Tensor:
    return Tensor(np.zeros(features.shape[:2]))
