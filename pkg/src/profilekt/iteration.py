"""Reward-weighted Analyst updates from Predictor feedback, interleaved with Predictor refits.

Each round draws ``k`` training instances and, for ``passes`` sweeps over them, samples
fresh profiles, scores them with the frozen
Predictor (+1 when the thresholded prediction matches the outcome, -1 otherwise), takes
minibatched steps on ``-sum(r * log pi(profile | history))`` and then refits the
Predictor from scratch on greedy profiles of the updated Analyst.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .analyst import (
    AnalystPolicy,
    SlotLabels,
    StructuredProfile,
    apply_step,
    batch_log_prob,
    sample_labels,
    weighted_nll_grad,
)
from .evaluation import acc_f1_arrays
from .instances import InstanceBank
from .predictor import PredictorModel, TrainConfig, predict_proba, train

log = logging.getLogger(__name__)


@dataclass
class IterationConfig:
    rounds: int = 3
    k: int = 1000
    lr: float = 1e-2
    batch_size: int = 32
    passes: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class KTOInstance:
    window_id: str
    history_len: int
    truth: bool
    profile: StructuredProfile
    log_prob: float
    probability: float
    predicted: bool
    reward: int


@dataclass
class RoundRecord:
    round: int
    mean_reward: float
    kto_loss: float
    n_sampled: int
    val_acc: float
    val_f1: float


@dataclass
class IterationTrace:
    initial_val_acc: float | None = None
    initial_val_f1: float | None = None
    rounds: list[RoundRecord] = field(default_factory=list)

    def val_acc_curve(self) -> list[float]:
        return [self.initial_val_acc] + [r.val_acc for r in self.rounds]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.rounds)


def compute_reward(predicted: bool, truth: bool) -> int:
    return 1 if bool(predicted) == bool(truth) else -1


def kto_loss(instances) -> float:
    """``-sum(r * log_prob)`` over the batch, unnormalised."""
    return -float(sum(i.reward * i.log_prob for i in instances))


def kto_objective(policy: AnalystPolicy, bank: InstanceBank, labels: SlotLabels, rewards: np.ndarray) -> float:
    """The same loss as a function of the policy with profiles and rewards held fixed."""
    return -float(np.dot(rewards, batch_log_prob(policy, bank.slots, labels)))


def kto_step(policy: AnalystPolicy, predictor: PredictorModel, batch: InstanceBank, lr: float,
             rng: np.random.Generator) -> tuple[AnalystPolicy, list[KTOInstance]]:
    if len(batch) == 0:
        return policy, []
    labels = sample_labels(policy, batch.slots, rng)
    log_probs = batch_log_prob(policy, batch.slots, labels)
    probs = predict_proba(predictor, batch.features(labels))
    predicted = probs >= 0.5
    rewards = np.where(predicted == (batch.y > 0.5), 1.0, -1.0)
    new_policy = apply_step(policy, weighted_nll_grad(policy, batch.slots, labels, rewards), lr)
    records = [
        KTOInstance(batch.window_ids[i], int(batch.history_len[i]), bool(batch.y[i] > 0.5),
                    batch.profile(i, labels), float(log_probs[i]), float(probs[i]),
                    bool(predicted[i]), int(rewards[i]))
        for i in range(len(batch))
    ]
    return new_policy, records


def greedy_features(policy: AnalystPolicy, bank: InstanceBank) -> np.ndarray:
    return bank.features(bank.labels(policy, greedy=True))


def retrain_predictor(policy: AnalystPolicy, bank: InstanceBank,
                      config: TrainConfig | None = None) -> PredictorModel:
    """Fit a fresh Predictor on greedy profiles from ``policy``."""
    model, _ = train(PredictorModel.zeros(), greedy_features(policy, bank), bank.y, config)
    return model


def validation_scores(policy: AnalystPolicy, predictor: PredictorModel, bank: InstanceBank) -> tuple[float, float]:
    predicted = predict_proba(predictor, greedy_features(policy, bank)) >= 0.5
    return acc_f1_arrays(predicted, bank.y > 0.5)


def run_iterations(policy: AnalystPolicy, predictor: PredictorModel, train_bank: InstanceBank,
                   val_bank: InstanceBank, config: IterationConfig | None = None,
                   predictor_config: TrainConfig | None = None,
                   on_round: Callable[[int, AnalystPolicy, PredictorModel, float], None] | None = None,
                   ) -> tuple[AnalystPolicy, PredictorModel, IterationTrace]:
    """Run ``config.rounds`` rounds; ``on_round(r, policy, predictor, val_acc)`` sees every
    checkpoint, round 0 being the inputs."""
    config = config or IterationConfig()
    predictor_config = predictor_config or TrainConfig()
    trace = IterationTrace()
    trace.initial_val_acc, trace.initial_val_f1 = validation_scores(policy, predictor, val_bank)
    if on_round:
        on_round(0, policy, predictor, trace.initial_val_acc)
    k = config.k
    if config.rounds and k > len(train_bank):
        log.warning("k=%d exceeds %d training instances; clamping", k, len(train_bank))
        k = len(train_bank)
    for r in range(1, config.rounds + 1):
        rng = np.random.default_rng([config.seed, r])
        chosen = rng.permutation(len(train_bank))[:k]
        instances: list[KTOInstance] = []
        for _ in range(config.passes):
            for b in range(0, k, config.batch_size):
                batch = train_bank.take(chosen[b:b + config.batch_size])
                policy, recs = kto_step(policy, predictor, batch, config.lr, rng)
                instances.extend(recs)
        round_cfg = TrainConfig(**{**asdict(predictor_config), "seed": predictor_config.seed + r})
        predictor = retrain_predictor(policy, train_bank, round_cfg)
        acc, f1 = validation_scores(policy, predictor, val_bank)
        trace.rounds.append(RoundRecord(r, float(np.mean([i.reward for i in instances])),
                                        kto_loss(instances), len(instances), acc, f1))
        if on_round:
            on_round(r, policy, predictor, acc)
        log.info("round %d: mean reward %.3f, val acc %.4f", r, trace.rounds[-1].mean_reward, acc)
    return policy, predictor, trace
