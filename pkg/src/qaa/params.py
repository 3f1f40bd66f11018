"""Parameter storage, initialization and first-order optimizers."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .exceptions import ConfigError, DomainError, NumericError
from .tensor import Tensor

__all__ = ["ParamStore", "OptimizerConfig", "Optimizer", "optimizer_step", "glorot_uniform"]


def glorot_uniform(rng: np.random.Generator, dims: tuple[int, ...]) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)).

    For tensors with more than two axes the first axis is the fan-in and the
    product of the rest is the fan-out.
    """
    if len(dims) == 1:
        fan_in, fan_out = 1, dims[0]
    else:
        fan_in, fan_out = dims[0], math.prod(dims[1:])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=dims)


class ParamStore:
    """Ordered name -> parameter tensor map with a seeded initializer.

    Iteration follows insertion order, so initialization and optimizer
    updates are reproducible for a given ``seed``.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise DomainError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def init(self, name: str, dims, kind: str = "glorot") -> Tensor:
        dims = tuple(int(d) for d in dims)
        if kind == "glorot":
            value = glorot_uniform(self.rng, dims)
        elif kind == "zeros":
            value = np.zeros(dims)
        else:
            raise ConfigError(f"unknown initializer {kind!r}")
        return self.add(name, value)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def subset(self, prefix: str) -> dict[str, Tensor]:
        """Parameters under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self._params.items() if k.startswith(prefix + ".")}

    def numel(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in state:
                raise DomainError(f"missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DomainError(f"parameter {name!r}: dims {list(arr.shape)} != {t.dims}")
            t.data[...] = arr


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")


class Optimizer:
    """Adam (default) or plain SGD over every tensor in a :class:`ParamStore`."""

    def __init__(self, store: ParamStore, config: OptimizerConfig | None = None):
        self.store = store
        self.config = config or OptimizerConfig()
        self.t = 0
        self._m = {k: np.zeros_like(v.data) for k, v in store.items()}
        self._v = {k: np.zeros_like(v.data) for k, v in store.items()}

    def step(self) -> None:
        cfg = self.config
        for name, p in self.store.items():
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in parameter {name!r}")
        self.t += 1
        if cfg.kind == "sgd":
            for p in self.store.values():
                p.data -= cfg.lr * p.grad
        else:
            c1 = 1.0 - cfg.beta1**self.t
            c2 = 1.0 - cfg.beta2**self.t
            for name, p in self.store.items():
                m, v = self._m[name], self._v[name]
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * p.grad
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * p.grad * p.grad
                p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        self.store.zero_grad()


def optimizer_step(store: ParamStore, config: OptimizerConfig | None = None) -> ParamStore:
    """One-shot update with a fresh optimizer state (first step semantics)."""
    Optimizer(store, config).step()
    return store
