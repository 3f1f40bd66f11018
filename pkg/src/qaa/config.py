"""Run configuration: one JSON document validated before any work starts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigError
from .fusion import FUSION_KINDS, FusionConfig
from .model import BRANCHES
from .object_map import GridSpec

__all__ = ["RunConfig", "load_config"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSection(_Section):
    seed: int = Field(0, ge=0)
    n_train: int = Field(2000, ge=1)
    n_val: int = Field(500, ge=1)
    image: tuple[int, int] = (56, 56)
    grid: tuple[int, int] = (14, 14)
    d_v: int = Field(16, ge=7)
    noise: float = Field(0.05, ge=0.0)
    recall: float = Field(1.0, ge=0.0, le=1.0)

    @field_validator("grid", mode="before")
    @classmethod
    def _parse_grid(cls, value):
        if isinstance(value, str):
            g = GridSpec.parse(value)
            return (g.rows, g.cols)
        return value

    @field_validator("image", "grid")
    @classmethod
    def _positive(cls, value):
        if min(value) < 1:
            raise ValueError("dimensions must be positive")
        return value

    @property
    def grid_spec(self) -> GridSpec:
        return GridSpec(*self.grid)


class FusionSection(_Section):
    kind: Literal[FUSION_KINDS] = "linear"
    c: int = Field(64, ge=1)
    t_q: int = Field(32, ge=1)
    t_v: int = Field(32, ge=1)
    t_o: int = Field(32, ge=1)
    rank: int = Field(5, ge=1)
    blocks: int = Field(4, ge=1)
    activation: Literal["tanh", "identity"] = "tanh"


class ModelSection(_Section):
    branches: tuple[Literal[BRANCHES], ...] = ("sg", "qaa")
    d_q: int = Field(64, ge=1)
    embed_dim: int = Field(32, ge=1)
    attention: bool = False
    attention_dim: int = Field(32, ge=1)
    share_attention: bool = False
    fusion: FusionSection = FusionSection()

    @field_validator("branches")
    @classmethod
    def _distinct(cls, value):
        if not value or len(set(value)) != len(value):
            raise ValueError("branches must be a non-empty list of distinct names")
        return value


class OptimSection(_Section):
    kind: Literal["adam", "sgd"] = "adam"
    lr: float = Field(1e-3, gt=0.0)
    epochs: int = Field(30, ge=0)
    batch: int = Field(32, ge=1)
    seed: int = Field(0, ge=0)


class PriorSection(_Section):
    threshold: float = Field(0.5, ge=0.0, le=1.0)


class RunConfig(_Section):
    """Sections ``data``, ``model``, ``optim`` and ``prior``; unknown keys are rejected."""

    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    optim: OptimSection = OptimSection()
    prior: PriorSection = PriorSection()

    @classmethod
    def from_dict(cls, obj) -> "RunConfig":
        try:
            cfg = cls.model_validate(obj)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from None
        # surface fusion shape problems (e.g. block divisibility) at load time
        cfg.fusion_config(d_out=1)
        return cfg

    def fusion_config(self, d_out: int) -> FusionConfig:
        f = self.model.fusion
        return FusionConfig(kind=f.kind, d_q=self.model.d_q, d_v=self.data.d_v, d_out=d_out, c=f.c,
                            t_q=f.t_q, t_v=f.t_v, t_o=f.t_o, rank=f.rank, blocks=f.blocks,
                            activation=f.activation)

    def estimator_params(self) -> dict:
        """Keyword arguments for :class:`qaa.model.QAAClassifier`."""
        m, f, o = self.model, self.model.fusion, self.optim
        return dict(
            branches=tuple(m.branches), fusion=f.kind, fusion_hidden=f.c, t_q=f.t_q, t_v=f.t_v,
            t_o=f.t_o, rank=f.rank, blocks=f.blocks, activation=f.activation, attention=m.attention,
            attention_dim=m.attention_dim, share_attention=m.share_attention, d_q=m.d_q,
            embed_dim=m.embed_dim, optimizer=o.kind, lr=o.lr, epochs=o.epochs, batch_size=o.batch,
            prior_threshold=self.prior.threshold, random_state=o.seed,
        )

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{where}: {err['msg']}")
    return "invalid config: " + "; ".join(parts)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(obj)
