"""Logistic Predictor over (history, profile, target exercise) features."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .analyst import (
    MASTERY_LABELS,
    OUTLOOK_LABELS,
    TREND_LABELS,
    NextQuestion,
    StructuredProfile,
    warmup_lr,
)
from .data import InteractionRecord

FEATURE_SCHEMA = "profilekt.predictor-features/v1"
BASE_DIM = 6
PROFILE_DIM = len(MASTERY_LABELS) + len(TREND_LABELS) + len(OUTLOOK_LABELS)
DIM = BASE_DIM + PROFILE_DIM
EPS = 1e-12
HISTORY_SCALE = 50
# labels assumed for a target KC the profile has no section for
UNSEEN_MASTERY, UNSEEN_TREND = "Developing", "Flat"


def base_features(history: Sequence[InteractionRecord], target: NextQuestion) -> np.ndarray:
    if not history:
        raise ValueError("history must be non-empty")
    kc = target.target_kc
    on_kc = [r.correct for r in history if kc in r.kc_ids]
    return np.array([
        1.0,
        sum(r.correct for r in history) / len(history),
        sum(on_kc) / len(on_kc) if on_kc else 0.5,
        target.difficulty,
        len(history) / HISTORY_SCALE,
        float(history[-1].correct),
    ])


def profile_block(mastery: int | None, trend: int | None, outlook: int | None) -> np.ndarray:
    """One-hot profile block; all zeros when ``outlook`` is None (no profile)."""
    block = np.zeros(PROFILE_DIM)
    if outlook is None:
        return block
    block[mastery] = 1.0
    block[len(MASTERY_LABELS) + trend] = 1.0
    block[len(MASTERY_LABELS) + len(TREND_LABELS) + outlook] = 1.0
    return block


def profile_indices(profile: StructuredProfile, target: NextQuestion) -> tuple[int, int, int]:
    a = profile.assessment(target.target_kc)
    mastery = a.mastery if a is not None else UNSEEN_MASTERY
    trend = a.trend if a is not None else UNSEEN_TREND
    return MASTERY_LABELS.index(mastery), TREND_LABELS.index(trend), OUTLOOK_LABELS.index(profile.outlook)


def featurize(history: Sequence[InteractionRecord], profile: StructuredProfile | None,
              target: NextQuestion) -> np.ndarray:
    """18-dim feature vector; multi-KC targets use their first KC."""
    base = base_features(history, target)
    if profile is None:
        return np.concatenate([base, profile_block(None, None, None)])
    return np.concatenate([base, profile_block(*profile_indices(profile, target))])


@dataclass
class PredictorModel:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (DIM,):
            raise ValueError(f"weights must have shape ({DIM},), got {self.w.shape}")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weights are not finite")

    @classmethod
    def zeros(cls) -> "PredictorModel":
        return cls(np.zeros(DIM))

    def to_json(self) -> str:
        return json.dumps({"schema": FEATURE_SCHEMA, "weights": self.w.tolist()}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PredictorModel":
        d = json.loads(text)
        if d.get("schema") != FEATURE_SCHEMA:
            raise ValueError(f"feature schema mismatch: {d.get('schema')!r} != {FEATURE_SCHEMA!r}")
        return cls(np.array(d["weights"], dtype=float))


@dataclass
class PredictionOutcome:
    probability: float
    label: bool
    truth: bool | None = None
    reward: int | None = None


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def predict_proba(model: PredictorModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    if X.shape[1] != DIM:
        raise ValueError(f"expected {DIM} features, got {X.shape[1]}")
    return sigmoid(X @ model.w)


def predict(model: PredictorModel, features: np.ndarray) -> PredictionOutcome:
    features = np.asarray(features, dtype=float)
    if features.shape != (DIM,):
        raise ValueError(f"expected {DIM} features, got shape {features.shape}")
    p = float(sigmoid(features @ model.w))
    return PredictionOutcome(p, p >= 0.5)


def bce_loss(y_hat, y):
    y_hat = np.clip(y_hat, EPS, 1.0 - EPS)
    return -(y * np.log(y_hat) + (1 - y) * np.log(1.0 - y_hat))


def mean_bce(model: PredictorModel, X: np.ndarray, y: np.ndarray) -> float:
    # from logits: log(1 + e^z) - y z stays exact where the sigmoid saturates
    z = np.atleast_2d(X) @ model.w
    return float(np.mean(np.logaddexp(0.0, z) - np.asarray(y, dtype=float) * z))


def bce_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of mean BCE w.r.t. the weights: mean of (y_hat - y) * phi."""
    return X.T @ (sigmoid(X @ w) - y) / len(y)


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-2
    warmup_ratio: float = 0.1
    batch_size: int = 32
    seed: int = 0


def train(model: PredictorModel, X: np.ndarray, y: np.ndarray, config: TrainConfig | None = None,
          on_epoch: Callable[[int, PredictorModel], None] | None = None) -> tuple[PredictorModel, list[float]]:
    """Minibatch gradient descent on mean BCE; returns the new model and per-epoch training loss."""
    config = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("training set is empty")
    bs = max(1, config.batch_size)
    per_epoch = math.ceil(n / bs)
    total = per_epoch * config.epochs
    rng = np.random.default_rng(config.seed)
    w = model.w.copy()
    losses = []
    step = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        for b in range(per_epoch):
            idx = np.sort(perm[b * bs:(b + 1) * bs])
            w = w - warmup_lr(config.lr, step, total, config.warmup_ratio) * bce_grad(w, X[idx], y[idx])
            step += 1
        current = PredictorModel(w)
        losses.append(mean_bce(current, X, y))
        if on_epoch is not None:
            on_epoch(epoch, current)
    return PredictorModel(w), losses
