"""Question-agnostic attention for visual question answering.

Object maps rasterized from instance masks (or a dataset-wide presence
prior) mask a spatial feature grid before pooling and fusion with the
question.  The package bundles a small autodiff substrate, four fusion
operators, a synthetic grid-world dataset, evaluation metrics and a CLI.
"""

from .exceptions import (
    ConfigError,
    ContractViolation,
    DomainError,
    LoadError,
    NumericError,
    ParseError,
    QAAError,
    ShapeError,
)
from .fusion import FusionConfig, param_count
from .metrics import (
    EvalResult,
    evaluate,
    mpt,
    normalized_mpt,
    per_type_accuracy,
    vqa_accuracy,
)
from .model import QAAClassifier, load_checkpoint, save_checkpoint
from .object_map import (
    GridSpec,
    InstanceMask,
    ObjectMap,
    ObjectMapRasterizer,
    rasterize_instances,
)
from .prior import IQAAPrior
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractViolation",
    "DomainError",
    "EvalResult",
    "FusionConfig",
    "GridSpec",
    "IQAAPrior",
    "InstanceMask",
    "LoadError",
    "NumericError",
    "ObjectMap",
    "ObjectMapRasterizer",
    "ParseError",
    "QAAClassifier",
    "QAAError",
    "ShapeError",
    "Tape",
    "Tensor",
    "evaluate",
    "load_checkpoint",
    "mpt",
    "normalized_mpt",
    "param_count",
    "per_type_accuracy",
    "rasterize_instances",
    "save_checkpoint",
    "vqa_accuracy",
]
