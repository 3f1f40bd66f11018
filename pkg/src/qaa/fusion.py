"""Multimodal fusion operators: Linear, Concat-MLP, Mutan and Block.

Every operator maps a question vector ``q`` (``[N, d_q]``) and a pooled
visual vector ``v`` (``[N, d_v]``) to answer scores ``[N, d_out]``.
Parameters live in a :class:`~qaa.params.ParamStore` under a name prefix.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ShapeError
from .params import ParamStore
from .tensor import Tensor

__all__ = [
    "FUSION_KINDS",
    "FusionConfig",
    "init_fusion",
    "fuse",
    "linear_fusion",
    "concat_mlp_fusion",
    "mutan_fusion",
    "block_fusion",
    "full_core_bilinear",
    "param_count",
]

FUSION_KINDS = ("linear", "concat_mlp", "mutan", "block")
DROPOUT_RATE = 0.3


@dataclass(frozen=True)
class FusionConfig:
    kind: str = "linear"
    d_q: int = 64
    d_v: int = 16
    d_out: int = 18
    c: int = 64
    t_q: int = 32
    t_v: int = 32
    t_o: int = 32
    rank: int = 5
    blocks: int = 4
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion kind {self.kind!r}")
        if self.activation not in ("tanh", "identity"):
            raise ConfigError(f"activation must be tanh or identity, got {self.activation!r}")
        for name in ("d_q", "d_v", "d_out", "c", "t_q", "t_v", "t_o", "rank", "blocks"):
            if getattr(self, name) < 1:
                raise ConfigError(f"fusion {name} must be positive")
        if self.kind == "block":
            for name in ("t_q", "t_v", "t_o"):
                if getattr(self, name) % self.blocks:
                    raise ConfigError(f"block count {self.blocks} does not divide {name}={getattr(self, name)}")

    def with_dims(self, **dims) -> "FusionConfig":
        return replace(self, **dims)

    def to_dict(self) -> dict:
        return asdict(self)


def _shapes(cfg: FusionConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, dims, initializer) for every tensor of ``cfg.kind``, in order."""
    if cfg.kind == "linear":
        return [
            ("W_q", (cfg.d_q, cfg.c), "glorot"),
            ("W_v", (cfg.d_v, cfg.c), "glorot"),
            ("b_h", (cfg.c,), "zeros"),
            ("W_P", (cfg.c, cfg.d_out), "glorot"),
            ("b_P", (cfg.d_out,), "zeros"),
        ]
    if cfg.kind == "concat_mlp":
        return [
            ("W_1", (cfg.d_q + cfg.d_v, cfg.c), "glorot"),
            ("b_1", (cfg.c,), "zeros"),
            ("W_2", (cfg.c, cfg.c), "glorot"),
            ("b_2", (cfg.c,), "zeros"),
            ("W_3", (cfg.c, cfg.d_out), "glorot"),
            ("b_3", (cfg.d_out,), "zeros"),
        ]
    head = [
        ("W_q", (cfg.d_q, cfg.t_q), "glorot"),
        ("b_q", (cfg.t_q,), "zeros"),
        ("W_v", (cfg.d_v, cfg.t_v), "glorot"),
        ("b_v", (cfg.t_v,), "zeros"),
    ]
    tail = [("W_o", (cfg.t_o, cfg.d_out), "glorot"), ("b_o", (cfg.d_out,), "zeros")]
    if cfg.kind == "mutan":
        core = []
        for r in range(1, cfg.rank + 1):
            core += [(f"U_{r}", (cfg.t_q, cfg.t_o), "glorot"), (f"V_{r}", (cfg.t_v, cfg.t_o), "glorot")]
        return head + core + tail
    B = cfg.blocks
    cores = [(f"T_{b}", (cfg.t_q // B, cfg.t_v // B, cfg.t_o // B), "glorot") for b in range(1, B + 1)]
    return head + cores + tail


def init_fusion(store: ParamStore, prefix: str, cfg: FusionConfig) -> dict[str, Tensor]:
    for name, dims, kind in _shapes(cfg):
        store.init(f"{prefix}.{name}", dims, kind)
    return store.subset(prefix)


def param_count(cfg: FusionConfig) -> int:
    """Closed-form number of scalars (biases included)."""
    if cfg.kind == "linear":
        return cfg.d_q * cfg.c + cfg.d_v * cfg.c + cfg.c + cfg.c * cfg.d_out + cfg.d_out
    if cfg.kind == "concat_mlp":
        c = cfg.c
        return (cfg.d_q + cfg.d_v) * c + c + c * c + c + c * cfg.d_out + cfg.d_out
    proj = cfg.d_q * cfg.t_q + cfg.t_q + cfg.d_v * cfg.t_v + cfg.t_v
    out = cfg.t_o * cfg.d_out + cfg.d_out
    if cfg.kind == "mutan":
        return proj + cfg.rank * cfg.t_o * (cfg.t_q + cfg.t_v) + out
    return proj + cfg.t_q * cfg.t_v * cfg.t_o // cfg.blocks**2 + out


def _check_inputs(q: Tensor, v: Tensor, cfg: FusionConfig) -> None:
    if q.shape[-1] != cfg.d_q or v.shape[-1] != cfg.d_v:
        raise ShapeError(f"fusion expects q[..., {cfg.d_q}] and v[..., {cfg.d_v}], got {q.dims} and {v.dims}")
    if q.shape[:-1] != v.shape[:-1]:
        raise ShapeError(f"batch dims differ: {q.dims} vs {v.dims}")


def _act(x: Tensor, cfg: FusionConfig) -> Tensor:
    return T.tanh(x) if cfg.activation == "tanh" else x


def _dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, W), b)


def linear_fusion(q, v, params, cfg: FusionConfig) -> Tensor:
    """``W_P act(W_q q + W_v v + b_h) + b_P``; identity activation gives the purely linear map."""
    q, v = T._as_tensor(q), T._as_tensor(v)
    _check_inputs(q, v, cfg)
    p = params
    joint = T.add(T.add(T.matmul(q, p["W_q"]), T.matmul(v, p["W_v"])), p["b_h"])
    return _dense(_act(joint, cfg), p["W_P"], p["b_P"])


def _dropout(x: Tensor, rng: np.random.Generator | None) -> Tensor:
    if rng is None:
        return x
    keep = (rng.random(x.shape) >= DROPOUT_RATE) / (1.0 - DROPOUT_RATE)
    return T.mul(x, Tensor(keep))


def concat_mlp_fusion(q, v, params, cfg: FusionConfig, dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Three-layer MLP on ``[q; v]``; dropout only when ``dropout_rng`` is given."""
    q, v = T._as_tensor(q), T._as_tensor(v)
    _check_inputs(q, v, cfg)
    p = params
    h = _dropout(T.relu(_dense(T.concat([q, v]), p["W_1"], p["b_1"])), dropout_rng)
    h = _dropout(T.relu(_dense(h, p["W_2"], p["b_2"])), dropout_rng)
    return _dense(h, p["W_3"], p["b_3"])


def _project(q, v, params, cfg):
    qt = _act(_dense(q, params["W_q"], params["b_q"]), cfg)
    vt = _act(_dense(v, params["W_v"], params["b_v"]), cfg)
    return qt, vt


def mutan_core(qt, vt, params, cfg: FusionConfig) -> Tensor:
    """Rank-constrained Tucker interaction: ``sum_r (U_r qt) * (V_r vt)``."""
    z = None
    for r in range(1, cfg.rank + 1):
        term = T.mul(T.matmul(qt, params[f"U_{r}"]), T.matmul(vt, params[f"V_{r}"]))
        z = term if z is None else T.add(z, term)
    return z


def mutan_fusion(q, v, params, cfg: FusionConfig) -> Tensor:
    q, v = T._as_tensor(q), T._as_tensor(v)
    _check_inputs(q, v, cfg)
    qt, vt = _project(q, v, params, cfg)
    return _dense(mutan_core(qt, vt, params, cfg), params["W_o"], params["b_o"])


def block_core(qt, vt, params, cfg: FusionConfig) -> Tensor:
    """Block-diagonal bilinear map: one small full core per chunk."""
    B = cfg.blocks
    ti, tj, tk = cfg.t_q // B, cfg.t_v // B, cfg.t_o // B
    outs = []
    for b, (qb, vb) in enumerate(zip(T.split_last(qt, B), T.split_last(vt, B)), 1):
        core = T.reshape(params[f"T_{b}"], (ti * tj, tk))
        outs.append(T.matmul(T.outer(qb, vb), core))
    return outs[0] if B == 1 else T.concat(outs)


def block_fusion(q, v, params, cfg: FusionConfig) -> Tensor:
    q, v = T._as_tensor(q), T._as_tensor(v)
    _check_inputs(q, v, cfg)
    qt, vt = _project(q, v, params, cfg)
    return _dense(block_core(qt, vt, params, cfg), params["W_o"], params["b_o"])


def full_core_bilinear(qt, vt, core) -> np.ndarray:
    """Unconstrained Tucker interaction ``o[k] = sum_ij core[i,j,k] qt[i] vt[j]``."""
    return np.einsum("ijk,...i,...j->...k", np.asarray(core), np.asarray(qt), np.asarray(vt))


def fuse(q, v, params, cfg: FusionConfig, dropout_rng: np.random.Generator | None = None) -> Tensor:
    if cfg.kind == "linear":
        return linear_fusion(q, v, params, cfg)
    if cfg.kind == "concat_mlp":
        return concat_mlp_fusion(q, v, params, cfg, dropout_rng)
    if cfg.kind == "mutan":
        return mutan_fusion(q, v, params, cfg)
    return block_fusion(q, v, params, cfg)
