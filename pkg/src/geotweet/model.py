"""Class-weighted maximum-entropy classifier (multinomial logistic regression).

The training objective is the weighted negative log-likelihood summed over
examples plus ``(l2_lambda / 2) * ||W||^2``; biases are not regularized.
Optimization is full-batch AdaGrad with step halving whenever a step would
increase the objective, so the recorded objective never goes up.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, NamedTuple

# Models are written once and read many times by worker threads.
os.environ.setdefault("HDF5_USE_FILE_LOCKING", "FALSE")

import h5py
import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp
from sklearn.utils.class_weight import compute_class_weight

from geotweet.errors import (
    ContractError,
    EmptyTrainingSet,
    FingerprintMismatch,
    FormatError,
    SingleClassData,
    TrainConfigError,
    TrainingDiverged,
    ZeroClassCount,
)
from geotweet.features import FeatureVector, Vocabulary, stack_vectors

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
_ADAGRAD_EPS = 1e-8
_MAX_HALVINGS = 40
_VLEN_STR = h5py.string_dtype(encoding="utf-8")


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and weighting settings for one training run."""

    l2_lambda: float = 0.0
    max_epochs: int = 50
    tol: float = 1e-4
    learning_rate: float = 0.1
    seed: int = 0
    class_weighting: bool = True

    def validate(self) -> None:
        if not self.l2_lambda >= 0:
            raise TrainConfigError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.max_epochs < 1:
            raise TrainConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not self.tol > 0:
            raise TrainConfigError(f"tol must be > 0, got {self.tol}")
        if not self.learning_rate > 0:
            raise TrainConfigError(f"learning_rate must be > 0, got {self.learning_rate}")

    def with_l2(self, l2_lambda: float) -> TrainConfig:
        return replace(self, l2_lambda=float(l2_lambda))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class MaxEntModel:
    """K weight rows over a D-dimensional feature space, plus K biases."""

    classes: list[str]
    weights: np.ndarray
    biases: np.ndarray
    vocab_fingerprint: str = ""
    config: TrainConfig | None = None
    history: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        k = len(self.classes)
        if k < 2:
            raise SingleClassData(list(self.classes))
        if self.weights.ndim != 2 or self.weights.shape[0] != k or self.biases.shape != (k,):
            raise ContractError(
                f"weights {self.weights.shape} / biases {self.biases.shape} "
                f"do not match {k} classes"
            )

    @property
    def dims(self) -> int:
        return int(self.weights.shape[1])

    def class_index(self, code: str) -> int:
        try:
            return self.classes.index(code)
        except ValueError:
            raise ContractError(f"class '{code}' is not known to the model") from None

    @classmethod
    def zeros(cls, classes: Sequence[str], dims: int, vocab_fingerprint: str = "") -> MaxEntModel:
        k = len(classes)
        return cls(
            classes=list(classes),
            weights=np.zeros((k, dims), dtype=np.float64),
            biases=np.zeros(k, dtype=np.float64),
            vocab_fingerprint=vocab_fingerprint,
        )


@dataclass(frozen=True)
class Prediction:
    """Predicted label and the full distribution over ``model.classes``."""

    label: str
    probabilities: np.ndarray

    @property
    def probability(self) -> float:
        return float(self.probabilities.max())


class Gradient(NamedTuple):
    weights: np.ndarray
    biases: np.ndarray


# ---------------------------------------------------------------------------
# Class weights
# ---------------------------------------------------------------------------


def class_weights(counts: dict[str, int] | Counter[str]) -> dict[str, float]:
    """Inverse-frequency weights ``N / (K * n_c)``.

    The count-weighted mean of the weights is 1.

    Raises:
        ZeroClassCount: If any class has a count below 1.
        SingleClassData: If fewer than two classes are given.
    """
    zero = sorted(c for c, n in counts.items() if n < 1)
    if zero:
        raise ZeroClassCount(zero)
    classes = sorted(counts)
    if len(classes) < 2:
        raise SingleClassData(classes)
    y = np.repeat(np.arange(len(classes)), [counts[c] for c in classes])
    weights = compute_class_weight("balanced", classes=np.arange(len(classes)), y=y)
    return {c: float(w) for c, w in zip(classes, weights)}


def order_classes(labels: Sequence[str]) -> list[str]:
    """Distinct labels by descending frequency, ties by code."""
    counts = Counter(labels)
    return sorted(counts, key=lambda c: (-counts[c], c))


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _log_probs(weights: np.ndarray, biases: np.ndarray, X: sp.csr_matrix) -> np.ndarray:
    scores = np.asarray(X @ weights.T) + biases
    return scores - logsumexp(scores, axis=1, keepdims=True)


def _objective(
    weights: np.ndarray,
    biases: np.ndarray,
    X: sp.csr_matrix,
    y: np.ndarray,
    sample_weight: np.ndarray,
    l2_lambda: float,
) -> tuple[float, Gradient]:
    log_p = _log_probs(weights, biases, X)
    rows = np.arange(X.shape[0])
    value = float(-np.dot(sample_weight, log_p[rows, y]))
    value += 0.5 * l2_lambda * float(np.vdot(weights, weights))

    residual = np.exp(log_p)
    residual[rows, y] -= 1.0
    residual *= sample_weight[:, None]
    grad_w = np.asarray(X.T @ residual).T + l2_lambda * weights
    grad_b = residual.sum(axis=0)
    return value, Gradient(grad_w, grad_b)


def nll_and_gradient(
    model: MaxEntModel,
    batch: Sequence[tuple[FeatureVector, int, float]],
    l2_lambda: float,
) -> tuple[float, Gradient]:
    """Weighted negative log-likelihood of *batch* and its exact gradient.

    Args:
        model: Parameters to evaluate at.
        batch: ``(vector, class_index, example_weight)`` triples.
        l2_lambda: Strength of the L2 penalty on the weight rows.

    Raises:
        ContractError: If a vector's dims differ from the model's or a class
            index is out of range.
    """
    k = len(model.classes)
    for _, y, _ in batch:
        if not 0 <= y < k:
            raise ContractError(f"class index {y} out of range for {k} classes")
    X = stack_vectors([v for v, _, _ in batch], model.dims)
    y = np.array([c for _, c, _ in batch], dtype=np.int64)
    w = np.array([s for _, _, s in batch], dtype=np.float64)
    return _objective(model.weights, model.biases, X, y, w, l2_lambda)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train_matrix(
    X: sp.csr_matrix,
    labels: Sequence[str],
    config: TrainConfig,
    *,
    vocab_fingerprint: str = "",
) -> MaxEntModel:
    """Fit a model on a design matrix with one label per row.

    Deterministic given ``(row order, config)``: parameters start at zero
    and every epoch uses the full batch.

    Raises:
        EmptyTrainingSet: If there are no rows.
        SingleClassData: If fewer than two distinct labels are present.
        TrainingDiverged: If no step size yields a finite objective.
    """
    config.validate()
    if X.shape[0] == 0:
        raise EmptyTrainingSet("a model")
    if X.shape[0] != len(labels):
        raise ContractError(f"{X.shape[0]} rows but {len(labels)} labels")
    classes = order_classes(labels)
    if len(classes) < 2:
        raise SingleClassData(classes)

    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels], dtype=np.int64)
    if config.class_weighting:
        cw = class_weights(Counter(labels))
        sample_weight = np.array([cw[c] for c in classes])[y]
    else:
        sample_weight = np.ones(len(y), dtype=np.float64)

    X = sp.csr_matrix(X, dtype=np.float64)
    model = MaxEntModel.zeros(classes, X.shape[1], vocab_fingerprint)
    W, b = model.weights, model.biases
    acc_w = np.zeros_like(W)
    acc_b = np.zeros_like(b)
    lr = config.learning_rate

    value, grad = _objective(W, b, X, y, sample_weight, config.l2_lambda)
    if not math.isfinite(value):
        raise TrainingDiverged(0, value)
    history = [value]

    for epoch in range(1, config.max_epochs + 1):
        acc_w += grad.weights**2
        acc_b += grad.biases**2
        dir_w = grad.weights / (np.sqrt(acc_w) + _ADAGRAD_EPS)
        dir_b = grad.biases / (np.sqrt(acc_b) + _ADAGRAD_EPS)

        for _ in range(_MAX_HALVINGS):
            cand_w = W - lr * dir_w
            cand_b = b - lr * dir_b
            cand_value, cand_grad = _objective(
                cand_w, cand_b, X, y, sample_weight, config.l2_lambda
            )
            if math.isfinite(cand_value) and cand_value <= value:
                break
            lr *= 0.5
        else:
            if not math.isfinite(cand_value):
                raise TrainingDiverged(epoch, cand_value)
            logger.debug("epoch %d: no descent step found, stopping", epoch)
            break

        improvement = (value - cand_value) / max(abs(value), 1e-12)
        W, b, value, grad = cand_w, cand_b, cand_value, cand_grad
        history.append(value)
        logger.debug("epoch %d: objective %.6f (lr %.3g)", epoch, value, lr)
        if improvement < config.tol:
            break

    model.weights, model.biases = W, b
    model.config = config
    model.history = history
    logger.info(
        "Trained %d classes x %d dims in %d epochs (objective %.4f -> %.4f)",
        len(classes),
        X.shape[1],
        len(history) - 1,
        history[0],
        history[-1],
    )
    return model


def train(
    dataset: Sequence[tuple[FeatureVector, str]],
    config: TrainConfig,
    *,
    vocab_fingerprint: str = "",
) -> MaxEntModel:
    """Fit a model on ``(vector, country)`` pairs."""
    if not dataset:
        raise EmptyTrainingSet("a model")
    dims = dataset[0][0].dims
    X = stack_vectors([v for v, _ in dataset], dims)
    return train_matrix(X, [c for _, c in dataset], config, vocab_fingerprint=vocab_fingerprint)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------


def predict(model: MaxEntModel, v: FeatureVector) -> Prediction:
    """Softmax over class scores; ties go to the lowest class index."""
    if v.dims != model.dims:
        raise ContractError(f"vector has {v.dims} dims, model expects {model.dims}")
    scores = model.weights[:, v.indices] @ v.values + model.biases
    probs = np.exp(scores - logsumexp(scores))
    return Prediction(label=model.classes[int(np.argmax(probs))], probabilities=probs)


def predict_matrix(model: MaxEntModel, X: sp.csr_matrix) -> tuple[list[str], np.ndarray]:
    """Labels and ``(n, K)`` probabilities for every row of *X*."""
    if X.shape[1] != model.dims:
        raise ContractError(f"matrix has {X.shape[1]} dims, model expects {model.dims}")
    if X.shape[0] == 0:
        return [], np.zeros((0, len(model.classes)))
    probs = np.exp(_log_probs(model.weights, model.biases, X))
    return [model.classes[i] for i in np.argmax(probs, axis=1)], probs


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(path: Path, model: MaxEntModel) -> Path:
    """Write *model* to an HDF5 file (atomic rename)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with h5py.File(tmp, "w") as f:
        f.attrs["format_version"] = MODEL_FORMAT_VERSION
        f.attrs["vocab_fingerprint"] = model.vocab_fingerprint
        f.attrs["train_config"] = json.dumps(model.config.to_dict() if model.config else {})
        f.attrs["created_at"] = datetime.now(UTC).isoformat()
        f.create_dataset("classes", data=model.classes, dtype=_VLEN_STR)
        f.create_dataset("weights", data=model.weights, dtype=np.float64)
        f.create_dataset("biases", data=model.biases, dtype=np.float64)
        f.create_dataset("history", data=np.array(model.history, dtype=np.float64))
    tmp.replace(path)
    return path


def load_model(path: Path, vocab: Vocabulary | None = None) -> MaxEntModel:
    """Read a model file, optionally checking it against *vocab*.

    Raises:
        FormatError: If the file is unreadable or from a newer format.
        FingerprintMismatch: If *vocab* is not the vocabulary the model was
            trained with.
    """
    try:
        with h5py.File(path, "r") as f:
            version = int(f.attrs.get("format_version", -1))
            if not 1 <= version <= MODEL_FORMAT_VERSION:
                raise FormatError(str(path), f"unsupported format_version {version}")
            classes = [c if isinstance(c, str) else c.decode("utf-8") for c in f["classes"][:]]
            raw_config = json.loads(f.attrs.get("train_config", "{}"))
            model = MaxEntModel(
                classes=classes,
                weights=np.asarray(f["weights"][:], dtype=np.float64),
                biases=np.asarray(f["biases"][:], dtype=np.float64),
                vocab_fingerprint=str(f.attrs.get("vocab_fingerprint", "")),
                config=TrainConfig(**raw_config) if raw_config else None,
                history=list(f["history"][:]) if "history" in f else [],
            )
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(str(path), str(exc)) from exc

    if vocab is not None:
        if vocab.fingerprint != model.vocab_fingerprint:
            raise FingerprintMismatch(model.vocab_fingerprint, vocab.fingerprint)
        if vocab.total_dims != model.dims:
            raise ContractError(f"vocabulary has {vocab.total_dims} dims, model {model.dims}")
    return model
