"""Ready-made finite-difference suites for the differentiable building blocks.

Each suite builds small random inputs, reduces the output to a scalar with a
fixed random projection and compares tape gradients with central differences.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import init_attention, spatial_attention
from .fusion import FUSION_KINDS, FusionConfig, fuse, init_fusion
from .gradcheck import GradCheckReport, finite_difference_check
from .model import QAAClassifier, encode_batch, init_encoder
from .object_map import GridSpec, ObjectMap
from .params import ParamStore
from .tensor import Tensor

__all__ = ["SUITES", "check_fusion", "check_attention", "check_encoder", "check_model", "run_suite"]

TOLERANCE = 1e-4


def small_fusion_config(kind: str) -> FusionConfig:
    return FusionConfig(kind=kind, d_q=5, d_v=4, d_out=3, c=6, t_q=4, t_v=4, t_o=4, rank=2, blocks=2)


def check_fusion(kind: str, seed: int = 0, tolerance: float = TOLERANCE) -> GradCheckReport:
    """Gradients of one fusion operator w.r.t. its parameters and both inputs (eval mode)."""
    rng = np.random.default_rng([seed, 7])
    cfg = small_fusion_config(kind)
    store = ParamStore(seed)
    params = dict(init_fusion(store, "f", cfg))
    # biases start at zero; move them so relu kinks and symmetric points are avoided
    for name, p in params.items():
        if name.startswith("b"):
            p.data[...] = rng.normal(scale=0.5, size=p.shape)
    q = Tensor(rng.normal(size=(3, cfg.d_q)), requires_grad=True)
    v = Tensor(rng.normal(size=(3, cfg.d_v)), requires_grad=True)
    proj = np.random.default_rng([seed, 8])
    weights = Tensor(proj.normal(size=(3, cfg.d_out)))
    fn = lambda: T.sum_all(T.mul(fuse(q, v, params, cfg), weights))  # noqa: E731
    return finite_difference_check(fn, {**params, "q": q, "v": v}, tolerance)


def check_attention(seed: int = 0, tolerance: float = TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng([seed, 9])
    store = ParamStore(seed)
    params = dict(init_attention(store, "att", d_q=5, d_v=4, dim=6))
    q = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    feats = Tensor(rng.normal(size=(2, 9, 4)), requires_grad=True)
    weights = Tensor(rng.normal(size=(2, 4)))
    fn = lambda: T.sum_all(T.mul(spatial_attention(q, feats, params).pooled, weights))  # noqa: E731
    return finite_difference_check(fn, {**params, "q": q, "features": feats}, tolerance)


def check_encoder(seed: int = 0, tolerance: float = TOLERANCE) -> GradCheckReport:
    rng = np.random.default_rng([seed, 10])
    store = ParamStore(seed)
    params = dict(init_encoder(store, vocab_size=7, embed_dim=4, d_q=5))
    tokens = np.array([[1, 4, 2, 6], [3, 5, 0, 0]])
    lengths = np.array([4, 2])
    weights = Tensor(rng.normal(size=(2, 5)))
    fn = lambda: T.sum_all(T.mul(encode_batch(tokens, lengths, params), weights))  # noqa: E731
    return finite_difference_check(fn, params, tolerance)


class _Record:
    def __init__(self, features, bits, question, grid):
        self.features = features
        self.object_map = ObjectMap(grid, bits)
        self.question = question
        self.grid = grid


def check_model(seed: int = 0, fusion: str = "linear", attention: bool = True,
                tolerance: float = TOLERANCE) -> GradCheckReport:
    """End-to-end gradient of the cross-entropy on one record, through every parameter."""
    rng = np.random.default_rng([seed, 11])
    grid = GridSpec(3, 3)
    bits = np.array([1, 0, 0, 1, 1, 0, 0, 0, 1], dtype=np.uint8)
    record = _Record(rng.normal(size=(grid.g, 4)), bits, [1, 3, 2], grid)
    model = QAAClassifier(branches=("sg", "qaa", "iqaa"), fusion=fusion, fusion_hidden=5, t_q=4, t_v=4,
                          t_o=4, rank=2, blocks=2, attention=attention, attention_dim=4, d_q=4,
                          embed_dim=3, vocab_size=5, prior_threshold=0.0, random_state=seed)
    model.initialize([record], ["yes"])
    # move off zero biases and the identity combiner so no point is special
    for p in model.params_.values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    fn = model.loss_closure([record], ["yes"])
    return finite_difference_check(fn, dict(model.params_.items()), tolerance)


SUITES = {f"fusion:{k}": (lambda k=k: check_fusion(k)) for k in FUSION_KINDS}
SUITES.update({"attention": check_attention, "encoder": check_encoder, "model": check_model})


def run_suite(name: str) -> GradCheckReport:
    return SUITES[name]()
