"""End-to-end VQA classifier with SG, QAA and IQAA branches.

Each branch pools its own view of the feature grid (raw, masked by the
per-image object map, or masked by the dataset prior), fuses it with the
encoded question and emits answer scores.  A learned linear layer combines
the concatenated branch scores into the final prediction.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .attention import init_attention, pool_unattended, spatial_attention
from .exceptions import ConfigError, DomainError, LoadError, NumericError, ShapeError
from .features import mask_features
from .fusion import FUSION_KINDS, FusionConfig, fuse, init_fusion
from .object_map import GridSpec, ObjectMap
from .params import Optimizer, OptimizerConfig, ParamStore
from .prior import accumulate_counts, normalize_counts, threshold_to_map
from .qtns import read_checkpoint, write_checkpoint
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

BRANCHES = ("sg", "qaa", "iqaa")
UNK = "<unk>"

__all__ = [
    "AnswerDictionary",
    "VQAInputs",
    "check_vqa_inputs",
    "init_encoder",
    "encode_question",
    "encode_batch",
    "forward_branch",
    "combine_predictions",
    "argmax_answer",
    "QAAClassifier",
    "save_checkpoint",
    "load_checkpoint",
]


class AnswerDictionary:
    """Top-K training answers (by frequency, ties alphabetical) plus a trailing UNK class."""

    def __init__(self, answers: Sequence[str]):
        answers = list(answers)
        if len(set(answers)) != len(answers):
            raise DomainError("answer dictionary entries must be unique")
        if UNK in answers:
            answers.remove(UNK)
        self.answers = answers + [UNK]
        self.index = {a: i for i, a in enumerate(self.answers)}

    @classmethod
    def build(cls, answers: Sequence[str], top_k: int | None = None) -> "AnswerDictionary":
        counts = Counter(answers)
        ranked = sorted(counts, key=lambda a: (-counts[a], a))
        return cls(ranked[:top_k] if top_k else ranked)

    @property
    def unk_index(self) -> int:
        return len(self.answers) - 1

    def __len__(self) -> int:
        return len(self.answers)

    def encode(self, answers: Sequence[str]) -> np.ndarray:
        return np.array([self.index.get(a, self.unk_index) for a in answers], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.answers[int(i)] for i in np.atleast_1d(ids)]


@dataclass
class VQAInputs:
    """Column-wise model inputs for ``N`` records."""

    features: np.ndarray  # [N, g, d_v]
    maps: np.ndarray  # [N, g]
    tokens: np.ndarray  # [N, L], zero padded
    lengths: np.ndarray  # [N]
    grid: GridSpec

    def __len__(self) -> int:
        return self.features.shape[0]

    def take(self, idx) -> "VQAInputs":
        return VQAInputs(self.features[idx], self.maps[idx], self.tokens[idx], self.lengths[idx], self.grid)


def check_vqa_inputs(X, vocab_size: int | None = None) -> VQAInputs:
    """Validate ``X`` and return it as :class:`VQAInputs`.

    Accepts a :class:`VQAInputs` or a sequence of records exposing
    ``features``, ``object_map``, ``question`` and ``grid``.
    """
    if not isinstance(X, VQAInputs):
        records = list(X)
        if not records:
            raise DomainError("no records")
        grid = records[0].grid
        for r in records:
            if not r.question:
                raise DomainError(f"record {getattr(r, 'id', '?')}: empty question")
        L = max(len(r.question) for r in records)
        tokens = np.zeros((len(records), L), dtype=np.int64)
        for i, r in enumerate(records):
            tokens[i, : len(r.question)] = r.question
        X = VQAInputs(
            features=np.stack([np.asarray(r.features, dtype=np.float64) for r in records]),
            maps=np.stack([r.object_map.bits for r in records]),
            tokens=tokens,
            lengths=np.array([len(r.question) for r in records], dtype=np.int64),
            grid=grid,
        )
    n = len(X)
    if X.features.ndim != 3 or X.features.shape[1] != X.grid.g:
        raise ShapeError(f"features must be [N, {X.grid.g}, d_v], got {list(X.features.shape)}")
    if X.maps.shape != (n, X.grid.g):
        raise ShapeError(f"maps must be [{n}, {X.grid.g}], got {list(X.maps.shape)}")
    if X.tokens.ndim != 2 or X.tokens.shape[0] != n or X.lengths.shape != (n,):
        raise ShapeError("token matrix and lengths do not match the record count")
    if np.any(X.lengths < 1):
        raise DomainError("empty question")
    if not np.all(np.isfinite(X.features)):
        raise DomainError("non-finite visual features")
    if vocab_size is not None and X.tokens.size and (X.tokens.min() < 0 or X.tokens.max() >= vocab_size):
        raise DomainError(f"token id outside vocabulary of size {vocab_size}")
    return X


# -- question encoder --------------------------------------------------------

_GATES = ("z", "r", "n")


def init_encoder(store: ParamStore, vocab_size: int, embed_dim: int, d_q: int, prefix: str = "encoder"):
    store.init(f"{prefix}.E", (vocab_size, embed_dim))
    for gate in _GATES:
        store.init(f"{prefix}.W_{gate}", (embed_dim, d_q))
        store.init(f"{prefix}.U_{gate}", (d_q, d_q))
        store.init(f"{prefix}.b_{gate}", (d_q,), "zeros")
    return store.subset(prefix)


def encode_batch(tokens: np.ndarray, lengths: np.ndarray, params) -> Tensor:
    """Embedding lookup followed by a single GRU layer; returns ``[N, d_q]`` final states.

    Gate updates::

        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        n = tanh(W_n x + U_n (r * h) + b_n)
        h' = (1 - z) * n + z * h

    Steps past a sequence's length leave its state unchanged.
    """
    tokens = np.asarray(tokens)
    lengths = np.asarray(lengths)
    vocab, _ = params["E"].shape
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        raise DomainError(f"token id outside vocabulary of size {vocab}")
    if np.any(lengths < 1):
        raise DomainError("empty question")
    n, steps = tokens.shape
    d_q = params["U_z"].shape[0]
    h = Tensor(np.zeros((n, d_q)))
    for t in range(int(lengths.max())):
        x = T.embedding(params["E"], tokens[:, t])
        z = T.sigmoid(T.add(T.add(T.matmul(x, params["W_z"]), T.matmul(h, params["U_z"])), params["b_z"]))
        r = T.sigmoid(T.add(T.add(T.matmul(x, params["W_r"]), T.matmul(h, params["U_r"])), params["b_r"]))
        cand = T.tanh(T.add(T.add(T.matmul(x, params["W_n"]), T.matmul(T.mul(r, h), params["U_n"])), params["b_n"]))
        h_new = T.add(h, T.mul(T.sub(Tensor(1.0), z), T.sub(cand, h)))
        live = (t < lengths).astype(np.float64)[:, None]
        if live.all():
            h = h_new
        else:
            h = T.add(T.mul(Tensor(live), h_new), T.mul(Tensor(1.0 - live), h))
    return h


def encode_question(token_ids: Sequence[int], params) -> Tensor:
    """Encode one question to a ``[d_q]`` vector."""
    if len(token_ids) == 0:
        raise DomainError("empty question")
    q = encode_batch(np.asarray([token_ids]), np.array([len(token_ids)]), params)
    return T.reshape(q, (q.shape[1],))


# -- branches and combination ------------------------------------------------

def branch_view(features: np.ndarray, branch: str, maps: np.ndarray | None = None,
                prior_map: np.ndarray | None = None) -> np.ndarray:
    """The feature grid a branch sees: raw (sg), per-image masked (qaa) or prior masked (iqaa)."""
    if branch == "sg":
        return features
    if branch == "qaa":
        if maps is None:
            raise ConfigError("qaa branch needs per-image object maps")
        return mask_features(features, maps)
    if branch == "iqaa":
        if prior_map is None:
            raise ConfigError("iqaa branch needs a fixed prior object map")
        return mask_features(features, prior_map)
    raise ConfigError(f"unknown branch {branch!r}")


def forward_branch(q: Tensor, features: np.ndarray, branch: str, fusion_params, fusion_cfg: FusionConfig,
                   attention_params=None, maps=None, prior_map=None, dropout_rng=None) -> Tensor:
    """Pool the branch's view of the grid (attention or mean) and fuse with ``q``."""
    view = branch_view(np.asarray(features, dtype=np.float64), branch, maps, prior_map)
    if attention_params is not None:
        pooled = spatial_attention(q, Tensor(view), attention_params).pooled
    else:
        pooled = pool_unattended(Tensor(view))
    return fuse(q, pooled, fusion_params, fusion_cfg, dropout_rng)


def combine_predictions(preds: Sequence[Tensor], params) -> Tensor:
    """Concatenate branch scores and map ``k*|D| -> |D|`` with ``W_c``, ``b_c``."""
    if not preds:
        raise DomainError("no predictions to combine")
    preds = [T._as_tensor(p) for p in preds]
    width = preds[0].shape[-1]
    if any(p.shape != preds[0].shape for p in preds):
        raise ShapeError(f"prediction dims differ: {[p.dims for p in preds]}")
    W = params["W_c"]
    if W.shape != (len(preds) * width, width):
        raise ShapeError(f"combiner dims {W.dims} do not fit {len(preds)} predictions of width {width}")
    joint = preds[0] if len(preds) == 1 else T.concat(preds)
    return T.add(T.matmul(joint, W), params["b_c"])


def argmax_answer(scores, answers: AnswerDictionary) -> str:
    """Highest-scoring answer; ties go to the lowest index."""
    return answers.answers[int(np.argmax(np.asarray(scores)))]


# -- estimator ---------------------------------------------------------------

class QAAClassifier(ClassifierMixin, BaseEstimator):
    """Question-agnostic-attention VQA classifier.

    Parameters
    ----------
    branches : tuple of {"sg", "qaa", "iqaa"}, default=("sg", "qaa")
        Visual branches trained jointly; their score vectors are combined by
        a learned linear layer.
    fusion : {"linear", "concat_mlp", "mutan", "block"}, default="linear"
    fusion_hidden, t_q, t_v, t_o, rank, blocks, activation
        Fusion hyperparameters (see :class:`qaa.fusion.FusionConfig`).
    attention : bool, default=False
        Pool each branch with question-guided spatial attention instead of
        the grid mean.
    attention_dim : int, default=32
    share_attention : bool, default=False
        One attention scorer for all branches instead of one per branch.
    d_q, embed_dim : int
        Question vector size and token embedding size.
    vocab_size : int or None
        Inferred from the largest token id when None.
    max_answers : int or None
        Keep only the top-K training answers; others map to UNK.
    optimizer : {"adam", "sgd"}, lr, epochs, batch_size
    prior_threshold : float, default=0.5
        Threshold on the normalized presence counts for the iqaa branch.
    random_state : int, default=0
    """

    def __init__(
        self,
        branches=("sg", "qaa"),
        fusion="linear",
        fusion_hidden=64,
        t_q=32,
        t_v=32,
        t_o=32,
        rank=5,
        blocks=4,
        activation="tanh",
        attention=False,
        attention_dim=32,
        share_attention=False,
        d_q=64,
        embed_dim=32,
        vocab_size=None,
        max_answers=None,
        optimizer="adam",
        lr=1e-3,
        epochs=30,
        batch_size=32,
        prior_threshold=0.5,
        random_state=0,
    ):
        self.branches = branches
        self.fusion = fusion
        self.fusion_hidden = fusion_hidden
        self.t_q = t_q
        self.t_v = t_v
        self.t_o = t_o
        self.rank = rank
        self.blocks = blocks
        self.activation = activation
        self.attention = attention
        self.attention_dim = attention_dim
        self.share_attention = share_attention
        self.d_q = d_q
        self.embed_dim = embed_dim
        self.vocab_size = vocab_size
        self.max_answers = max_answers
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.prior_threshold = prior_threshold
        self.random_state = random_state

    # parameters and structure

    def _validate_params(self) -> None:
        branches = tuple(self.branches)
        if not branches:
            raise ConfigError("at least one branch is required")
        unknown = set(branches) - set(BRANCHES)
        if unknown or len(set(branches)) != len(branches):
            raise ConfigError(f"branches must be distinct members of {BRANCHES}, got {branches}")
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if not 0.0 <= self.prior_threshold <= 1.0:
            raise ConfigError("prior_threshold must lie in [0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def fusion_config(self, d_v: int, d_out: int) -> FusionConfig:
        return FusionConfig(
            kind=self.fusion, d_q=self.d_q, d_v=d_v, d_out=d_out, c=self.fusion_hidden,
            t_q=self.t_q, t_v=self.t_v, t_o=self.t_o, rank=self.rank, blocks=self.blocks,
            activation=self.activation,
        )

    def _attention_prefix(self, branch: str) -> str:
        return "attention" if self.share_attention else f"{branch}.attention"

    def _build(self, vocab_size: int, d_v: int, n_answers: int) -> None:
        self._validate_params()
        self.fusion_config_ = self.fusion_config(d_v, n_answers)
        store = ParamStore(self.random_state)
        init_encoder(store, vocab_size, self.embed_dim, self.d_q)
        if self.attention and self.share_attention:
            init_attention(store, "attention", self.d_q, d_v, self.attention_dim)
        for b in self.branches:
            if self.attention and not self.share_attention:
                init_attention(store, f"{b}.attention", self.d_q, d_v, self.attention_dim)
            init_fusion(store, f"{b}.fusion", self.fusion_config_)
        k = len(self.branches)
        # stacked identities / k: starts as the mean of the branch predictions
        store.add("combiner.W_c", np.tile(np.eye(n_answers), (k, 1)) / k)
        store.add("combiner.b_c", np.zeros(n_answers))
        self.params_ = store
        self.d_v_ = d_v

    def _scores(self, X: VQAInputs, dropout_rng=None) -> Tensor:
        store = self.params_
        q = encode_batch(X.tokens, X.lengths, store.subset("encoder"))
        preds = []
        for b in self.branches:
            attn = store.subset(self._attention_prefix(b)) if self.attention else None
            preds.append(forward_branch(
                q, X.features, b, store.subset(f"{b}.fusion"), self.fusion_config_,
                attention_params=attn, maps=X.maps, prior_map=self.prior_map_, dropout_rng=dropout_rng,
            ))
        return combine_predictions(preds, store.subset("combiner"))

    def branch_scores(self, X, branch: str) -> np.ndarray:
        """Scores of one branch before combination (eval mode)."""
        check_is_fitted(self, "params_")
        X = check_vqa_inputs(X, self.vocab_size_)
        store = self.params_
        q = encode_batch(X.tokens, X.lengths, store.subset("encoder"))
        attn = store.subset(self._attention_prefix(branch)) if self.attention else None
        return forward_branch(q, X.features, branch, store.subset(f"{branch}.fusion"), self.fusion_config_,
                              attention_params=attn, maps=X.maps, prior_map=self.prior_map_).data

    # sklearn API

    def fit(self, X, y):
        """Train encoder, attention, fusion and combiner jointly with cross-entropy."""
        X = check_vqa_inputs(X)
        y = list(y)
        if len(y) != len(X):
            raise ShapeError(f"{len(X)} records but {len(y)} answers")
        self.answers_ = AnswerDictionary.build(y, self.max_answers)
        self.classes_ = np.array(self.answers_.answers, dtype=object)
        self.vocab_size_ = int(self.vocab_size or X.tokens.max() + 1)
        X = check_vqa_inputs(X, self.vocab_size_)
        self.grid_ = X.grid
        self.prior_map_ = None
        if "iqaa" in self.branches:
            counts = accumulate_counts((ObjectMap(X.grid, m) for m in X.maps), X.grid)
            self.prior_map_ = threshold_to_map(normalize_counts(counts), X.grid, self.prior_threshold).bits
        self._build(self.vocab_size_, X.features.shape[2], len(self.answers_))
        targets = self.answers_.encode(y)
        self._train(X, targets)
        return self

    def _train(self, X: VQAInputs, targets: np.ndarray) -> None:
        opt = Optimizer(self.params_, OptimizerConfig(kind=self.optimizer, lr=self.lr))
        shuffle_rng = np.random.default_rng([self.random_state, 1])
        dropout_rng = np.random.default_rng([self.random_state, 2])
        n = len(X)
        self.loss_curve_ = [self._mean_loss(X, targets)]
        for epoch in range(1, self.epochs + 1):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, self.batch_size)):
                idx = order[start : start + self.batch_size]
                with Tape() as tape:
                    loss = T.cross_entropy_loss(self._scores(X.take(idx), dropout_rng), targets[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
                tape.backward(loss)
                opt.step()
                total += value * len(idx)
            self.loss_curve_.append(total / n)
            logger.debug("epoch %d loss %.6f", epoch, self.loss_curve_[-1])

    def _mean_loss(self, X: VQAInputs, targets: np.ndarray) -> float:
        total = 0.0
        for start in range(0, len(X), 256):
            idx = np.arange(start, min(start + 256, len(X)))
            total += T.cross_entropy_loss(self._scores(X.take(idx)), targets[idx]).item() * len(idx)
        return total / len(X)

    def decision_function(self, X) -> np.ndarray:
        """Combined answer scores ``[N, |D|]`` in evaluation mode."""
        check_is_fitted(self, "params_")
        X = check_vqa_inputs(X, self.vocab_size_)
        if X.features.shape[2] != self.d_v_:
            raise ShapeError(f"model expects d_v={self.d_v_}, got {X.features.shape[2]}")
        out = [self._scores(X.take(np.arange(s, min(s + 256, len(X))))).data
               for s in range(0, len(X), 256)]
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return np.array([self.answers_.answers[i] for i in scores.argmax(axis=1)], dtype=object)

    def loss_closure(self, X, y):
        """Zero-argument callable returning the cross-entropy on ``(X, y)``; for gradient checks."""
        check_is_fitted(self, "params_")
        X = check_vqa_inputs(X, self.vocab_size_)
        targets = self.answers_.encode(list(y))
        return lambda: T.cross_entropy_loss(self._scores(X), targets)

    def initialize(self, X, y):
        """Set up answers, vocabulary and fresh parameters without training."""
        epochs = self.epochs
        self.epochs = 0
        try:
            return self.fit(X, y)
        finally:
            self.epochs = epochs


# -- checkpoints -------------------------------------------------------------

_CONFIG_KEY = "__config__"
_PRIOR_KEY = "__prior_map__"


def save_checkpoint(model: QAAClassifier, path, extra: dict | None = None) -> None:
    """Named-tensor container: parameters, optional prior map and a JSON config blob."""
    check_is_fitted(model, "params_")
    params = model.get_params()
    params["branches"] = list(params["branches"])
    config = {
        "estimator": params,
        "answers": model.answers_.answers,
        "vocab_size": model.vocab_size_,
        "grid": [model.grid_.rows, model.grid_.cols],
        "d_v": model.d_v_,
        "extra": extra or {},
    }
    blob = np.frombuffer(json.dumps(config, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    tensors = [(name, t.data) for name, t in model.params_.items()]
    if model.prior_map_ is not None:
        tensors.append((_PRIOR_KEY, model.prior_map_))
    tensors.append((_CONFIG_KEY, blob))
    write_checkpoint(path, tensors)


def load_checkpoint(path) -> QAAClassifier:
    try:
        tensors = read_checkpoint(path)
        config = json.loads(bytes(tensors.pop(_CONFIG_KEY).astype(np.uint8)).decode("utf-8"))
    except (KeyError, ValueError, OSError) as exc:
        raise LoadError(f"cannot load checkpoint {path}: {exc}") from None
    est = dict(config["estimator"])
    est["branches"] = tuple(est["branches"])
    model = QAAClassifier(**est)
    answers = config["answers"]
    model.answers_ = AnswerDictionary(answers)
    model.classes_ = np.array(model.answers_.answers, dtype=object)
    model.vocab_size_ = config["vocab_size"]
    model.grid_ = GridSpec(*config["grid"])
    prior = tensors.pop(_PRIOR_KEY, None)
    model.prior_map_ = None if prior is None else prior.astype(np.uint8)
    model._build(model.vocab_size_, config["d_v"], len(model.answers_))
    try:
        model.params_.load_state({k: v.astype(np.float64) for k, v in tensors.items()})
    except DomainError as exc:
        raise LoadError(f"checkpoint {path} does not match its config: {exc}") from None
    if set(tensors) != set(model.params_):
        raise LoadError(f"checkpoint {path} has unexpected tensors: {sorted(set(tensors) - set(model.params_))}")
    model.checkpoint_extra_ = config.get("extra", {})
    return model
