"""Learned confidence scores over agreement features.

The primary model is a logistic regressor over the 18 standardized features,
trained full-batch with Adam to maximize the per-program correctness
log-likelihood (equivalently: minimize the summed binary cross-entropy, with
L2 weight decay on the weights but not the bias). A small one-hidden-layer MLP
(5 tanh units) is available behind an ablation flag. Both are exposed as
sklearn-style estimators so they compose with the wider ecosystem.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_X_y

from .corpus import FoldAssignment, SchemaError, ValidationError, SCHEMA_VERSION
from .features import (
    FEATURE_ORDER_VERSION,
    FeatureVector,
    Standardizer,
    fit_standardizer_array,
)

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-12  # probabilities are clamped to [δ, 1-δ] inside logs

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 1500
    cross_epochs: int = 2000  # used when train and test corpora differ
    seed: int = 0
    folds: int = 10

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _clamped_xent(p: np.ndarray, y: np.ndarray) -> float:
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum())


def logistic_loss_and_grads(
    theta: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    weight_decay: float,
) -> tuple[float, np.ndarray, float]:
    """Summed negative log-likelihood with L2 penalty on theta, plus gradients."""
    z = X @ theta + bias
    p = _sigmoid(z)
    loss = _clamped_xent(p, y) + 0.5 * weight_decay * float(theta @ theta)
    residual = p - y
    grad_theta = X.T @ residual + weight_decay * theta
    grad_bias = float(residual.sum())
    return loss, grad_theta, grad_bias


def mlp_loss_and_grads(
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: float,
    X: np.ndarray,
    y: np.ndarray,
    weight_decay: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, float]:
    """Loss and gradients for the 18 -> hidden(tanh) -> 1 network.

    Weight decay applies to the weight matrices only, matching the logistic
    model's bias exclusion.
    """
    z1 = X @ w1 + b1
    h = np.tanh(z1)
    z = h @ w2 + b2
    p = _sigmoid(z)
    loss = _clamped_xent(p, y) + 0.5 * weight_decay * (float((w1 * w1).sum()) + float(w2 @ w2))
    residual = p - y
    grad_w2 = h.T @ residual + weight_decay * w2
    grad_b2 = float(residual.sum())
    dh = np.outer(residual, w2)
    dz1 = dh * (1.0 - h * h)
    grad_w1 = X.T @ dz1 + weight_decay * w1
    grad_b1 = dz1.sum(axis=0)
    return loss, grad_w1, grad_b1, grad_w2, grad_b2


class _Adam:
    """Plain full-batch Adam over a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float):
        self.params = params
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def _prior_bias(y: np.ndarray) -> float:
    rate = float(np.clip(y.mean(), PROB_CLAMP, 1.0 - PROB_CLAMP))
    return float(np.log(rate / (1.0 - rate)))


class LogisticScorer(BaseEstimator):
    """Logistic confidence model: sigma(theta . standardize(x) + bias).

    fit() standardizes the raw features internally; predict_proba/ decision_function
    take raw (unstandardized) feature rows.
    """

    def __init__(
        self,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-4,
        epochs: int = 1500,
        seed: int = 0,
    ):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed

    kind = "logistic"

    def fit(self, X, y) -> "LogisticScorer":
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.float64)
        self.standardizer_ = fit_standardizer_array(X)
        Xs = self.standardizer_.transform_array(X)
        theta = np.zeros(X.shape[1], dtype=np.float64)
        bias = np.zeros(1, dtype=np.float64)
        self.loss_curve_: list[float] = []

        if y.min() == y.max():
            logger.warning(
                "training labels are all %s; returning prior-only model",
                "positive" if y.min() == 1.0 else "negative",
            )
            self.theta_ = theta
            self.bias_ = _prior_bias(y)
            return self

        opt = _Adam([theta, bias], lr=self.learning_rate)
        for epoch in range(self.epochs):
            loss, g_theta, g_bias = logistic_loss_and_grads(
                theta, float(bias[0]), Xs, y, self.weight_decay
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            self.loss_curve_.append(loss)
            opt.step([g_theta, np.asarray([g_bias])])
        self.theta_ = theta
        self.bias_ = float(bias[0])
        return self

    def decision_function(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        Xs = self.standardizer_.transform_array(X)
        return Xs @ self.theta_ + self.bias_

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1] >= 0.5

    def parameters_dict(self) -> dict:
        return {"theta": self.theta_.tolist(), "bias": self.bias_}

    def load_parameters(self, params: dict) -> None:
        self.theta_ = np.asarray(params["theta"], dtype=np.float64)
        self.bias_ = float(params["bias"])


class MLPScorer(BaseEstimator):
    """One-hidden-layer (tanh) ablation model with the same training recipe."""

    def __init__(
        self,
        hidden_units: int = 5,
        learning_rate: float = 1e-3,
        weight_decay: float = 1e-4,
        epochs: int = 1500,
        seed: int = 0,
    ):
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed

    kind = "mlp"

    def fit(self, X, y) -> "MLPScorer":
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.float64)
        self.standardizer_ = fit_standardizer_array(X)
        Xs = self.standardizer_.transform_array(X)
        rng = np.random.default_rng(self.seed)
        w1 = rng.uniform(-0.3, 0.3, size=(X.shape[1], self.hidden_units))
        b1 = rng.uniform(-0.3, 0.3, size=self.hidden_units)
        w2 = rng.uniform(-0.3, 0.3, size=self.hidden_units)
        b2 = rng.uniform(-0.3, 0.3, size=1)
        self.loss_curve_ = []

        if y.min() == y.max():
            logger.warning("training labels are single-class; returning prior-only model")
            self.w1_, self.b1_, self.w2_ = np.zeros_like(w1), np.zeros_like(b1), np.zeros_like(w2)
            self.b2_ = _prior_bias(y)
            return self

        opt = _Adam([w1, b1, w2, b2], lr=self.learning_rate)
        for epoch in range(self.epochs):
            loss, gw1, gb1, gw2, gb2 = mlp_loss_and_grads(
                w1, b1, w2, float(b2[0]), Xs, y, self.weight_decay
            )
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            self.loss_curve_.append(loss)
            opt.step([gw1, gb1, gw2, np.asarray([gb2])])
        self.w1_, self.b1_, self.w2_, self.b2_ = w1, b1, w2, float(b2[0])
        return self

    def decision_function(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float64)
        Xs = self.standardizer_.transform_array(X)
        return np.tanh(Xs @ self.w1_ + self.b1_) @ self.w2_ + self.b2_

    def predict_proba(self, X) -> np.ndarray:
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1] >= 0.5

    def parameters_dict(self) -> dict:
        return {
            "w1": self.w1_.tolist(),
            "b1": self.b1_.tolist(),
            "w2": self.w2_.tolist(),
            "b2": self.b2_,
            "hidden_units": self.hidden_units,
        }

    def load_parameters(self, params: dict) -> None:
        self.w1_ = np.asarray(params["w1"], dtype=np.float64)
        self.b1_ = np.asarray(params["b1"], dtype=np.float64)
        self.w2_ = np.asarray(params["w2"], dtype=np.float64)
        self.b2_ = float(params["b2"])


def make_scorer(config: TrainConfig, model: str = "logistic", epochs: int | None = None):
    config.validate()
    cls = {"logistic": LogisticScorer, "mlp": MLPScorer}.get(model)
    if cls is None:
        raise ValidationError(f"unknown model kind {model!r}")
    return cls(
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        epochs=epochs if epochs is not None else config.epochs,
        seed=config.seed,
    )


def train(
    labeled: Sequence[tuple[FeatureVector, bool]],
    config: TrainConfig,
    model: str = "logistic",
    epochs: int | None = None,
):
    """Fit a scorer on (feature vector, correct) pairs; returns the estimator."""
    if not labeled:
        raise ValidationError("cannot train on an empty example list")
    X = np.asarray([fv.values for fv, _ in labeled], dtype=np.float64)
    y = np.asarray([1.0 if ok else 0.0 for _, ok in labeled])
    return make_scorer(config, model=model, epochs=epochs).fit(X, y)


def train_mlp(labeled: Sequence[tuple[FeatureVector, bool]], config: TrainConfig):
    return train(labeled, config, model="mlp")


def predict(model, fv: FeatureVector) -> float:
    """Confidence in (0, 1) for a single raw feature vector."""
    return float(model.predict_proba(np.asarray(fv.values)[None, :])[0, 1])


@dataclass
class CVResult:
    """Held-out scores plus, per fold, the problem ids the fold's model saw."""

    scores: dict[str, dict[int, float]]
    fold_train_problems: dict[int, tuple[str, ...]]


def cross_validate(
    problem_features: dict[str, dict[int, FeatureVector]],
    labels: dict[str, dict[int, bool]],
    folds: FoldAssignment,
    config: TrainConfig,
    model: str = "logistic",
) -> CVResult:
    """Score every program with a model trained on the other folds' problems."""
    scores: dict[str, dict[int, float]] = {}
    fold_train: dict[int, tuple[str, ...]] = {}
    for fold in range(folds.k):
        held_out = [pid for pid in problem_features if folds.fold_of[pid] == fold]
        train_ids = sorted(pid for pid in problem_features if folds.fold_of[pid] != fold)
        if not held_out:
            continue
        fold_train[fold] = tuple(train_ids)
        rows = [
            (problem_features[pid][idx], labels[pid][idx])
            for pid in train_ids
            for idx in sorted(problem_features[pid])
        ]
        estimator = train(rows, config, model=model)
        for pid in held_out:
            indices = sorted(problem_features[pid])
            X = np.asarray([problem_features[pid][i].values for i in indices])
            p = estimator.predict_proba(X)[:, 1]
            scores[pid] = {i: float(v) for i, v in zip(indices, p)}
    return CVResult(scores=scores, fold_train_problems=fold_train)


# ---------------------------------------------------------------------------
# Model file IO
# ---------------------------------------------------------------------------

def save_model(path: str | Path, estimator, trained_on: str, config_hash: str = "") -> None:
    doc = {
        "schema": "specrank/model",
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash,
        "kind": estimator.kind,
        "parameters": estimator.parameters_dict(),
        "standardizer": {
            "mean": list(estimator.standardizer_.mean),
            "std": list(estimator.standardizer_.std),
        },
        "feature_order_version": FEATURE_ORDER_VERSION,
        "trained_on": trained_on,
        "seed": estimator.seed,
        "epochs": estimator.epochs,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_model(path: str | Path):
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("schema") != "specrank/model" or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: not a model file of the expected schema version")
    if doc.get("feature_order_version") != FEATURE_ORDER_VERSION:
        raise SchemaError(
            f"{path}: feature order {doc.get('feature_order_version')!r} does not match "
            f"{FEATURE_ORDER_VERSION!r}"
        )
    if doc["kind"] == "logistic":
        estimator = LogisticScorer(epochs=doc["epochs"], seed=doc["seed"])
    elif doc["kind"] == "mlp":
        estimator = MLPScorer(
            hidden_units=doc["parameters"]["hidden_units"], epochs=doc["epochs"], seed=doc["seed"]
        )
    else:
        raise SchemaError(f"{path}: unknown model kind {doc['kind']!r}")
    estimator.load_parameters(doc["parameters"])
    estimator.standardizer_ = Standardizer(
        mean=tuple(doc["standardizer"]["mean"]), std=tuple(doc["standardizer"]["std"])
    )
    estimator.trained_on = doc.get("trained_on", "")
    return estimator
