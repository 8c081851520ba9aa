"""The four stages wired together in memory: distill, profile, train the Predictor, iterate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .analyst import AnalystPolicy, DistillConfig, SlotLabels, distill_fit
from .data import DatasetSplit
from .evaluation import EvalReport, instances_from_arrays, report
from .instances import MIN_HISTORY, InstanceBank, build_bank
from .iteration import IterationConfig, IterationTrace, greedy_features, run_iterations
from .predictor import PredictorModel, TrainConfig, predict_proba, train

log = logging.getLogger(__name__)


@dataclass
class StageConfig:
    distill: DistillConfig = field(default_factory=DistillConfig)
    distill_samples: int = 3000
    predictor: TrainConfig = field(default_factory=TrainConfig)
    iteration: IterationConfig = field(default_factory=IterationConfig)
    min_history: int = MIN_HISTORY

    def seeded(self, seed: int) -> "StageConfig":
        return StageConfig(
            distill=replace(self.distill, seed=seed),
            distill_samples=self.distill_samples,
            predictor=replace(self.predictor, seed=seed),
            iteration=replace(self.iteration, seed=seed),
            min_history=self.min_history,
        )


@dataclass
class Banks:
    train: InstanceBank
    validation: InstanceBank
    test: InstanceBank

    @classmethod
    def from_split(cls, split: DatasetSplit, min_history: int = MIN_HISTORY) -> "Banks":
        return cls(build_bank(split.train, min_history),
                   build_bank(split.validation, final_only=True),
                   build_bank(split.test, final_only=True))


def curated_teacher_labels(bank: InstanceBank, n: int, seed: int) -> tuple[np.ndarray, SlotLabels]:
    """Teacher labels on a seeded subset of ``n`` training instances, after curation."""
    from .analyst import curate, profile_to_labels, teacher_annotate

    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(bank))[:min(n, len(bank))])
    keep, labs = [], []
    for i in idx:
        profile = teacher_annotate(bank.stats[i], bank.next_q[i])
        if curate([profile]):
            keep.append(i)
            labs.append(profile_to_labels(profile))
    labels = SlotLabels(np.concatenate([l.mastery for l in labs]), np.concatenate([l.trend for l in labs]),
                        np.concatenate([l.outlook for l in labs]))
    return np.array(keep, dtype=np.int64), labels


def distill_stage(bank: InstanceBank, config: StageConfig) -> tuple[AnalystPolicy, list[float]]:
    idx, labels = curated_teacher_labels(bank, config.distill_samples, config.distill.seed)
    return distill_fit(AnalystPolicy.zeros(), bank.slots.take(idx), labels, config.distill)


def train_stage(policy: AnalystPolicy | None, bank: InstanceBank, config: TrainConfig,
                labels: SlotLabels | None = None) -> PredictorModel:
    """Fit a Predictor from zeros on greedy profiles of ``policy`` (or on ``labels``; neither = no profile)."""
    if labels is None and policy is not None:
        labels = bank.labels(policy, greedy=True)
    model, _ = train(PredictorModel.zeros(), bank.features(labels), bank.y, config)
    return model


def evaluate_bank(policy: AnalystPolicy | None, predictor: PredictorModel, bank: InstanceBank,
                  zero_profile: bool = False, labels: SlotLabels | None = None) -> EvalReport:
    if zero_profile:
        X = bank.features(None)
    elif labels is not None:
        X = bank.features(labels)
    else:
        X = greedy_features(policy, bank)
    predicted = predict_proba(predictor, X) >= 0.5
    return report(instances_from_arrays(bank.window_ids, bank.history_len, predicted, bank.y > 0.5))


@dataclass
class RunResult:
    distilled: AnalystPolicy
    stage3_predictor: PredictorModel
    policy: AnalystPolicy  # best checkpoint by validation accuracy
    predictor: PredictorModel
    best_round: int
    final_policy: AnalystPolicy
    final_predictor: PredictorModel
    trace: IterationTrace
    test_report: EvalReport


def run_all(banks: Banks, config: StageConfig) -> RunResult:
    distilled, _ = distill_stage(banks.train, config)
    stage3 = train_stage(distilled, banks.train, config.predictor)
    best: dict = {}

    def keep_best(r, policy, predictor, acc):
        # ties go to the earlier checkpoint
        if not best or acc > best["acc"]:
            best.update(round=r, policy=policy, predictor=predictor, acc=acc)

    policy, predictor, trace = run_iterations(distilled, stage3, banks.train, banks.validation,
                                              config.iteration, config.predictor, on_round=keep_best)
    log.info("selected round %d (val acc %.4f)", best["round"], best["acc"])
    return RunResult(distilled, stage3, best["policy"], best["predictor"], best["round"], policy, predictor,
                     trace, evaluate_bank(best["policy"], best["predictor"], banks.test))


ABLATIONS = ("Full", "w/o Iteration", "w/o Profile (Inference)", "w/o Profile")


def ablation_runs(banks: Banks, config: StageConfig, seeds) -> tuple[dict[str, list[EvalReport]], list[RunResult]]:
    """Per-seed test reports for the full method and its three ablations.

    ``w/o Profile (Inference)`` reuses the profile-trained Predictor with the profile block zeroed;
    ``w/o Profile`` trains and evaluates without profiles.
    """
    runs: dict[str, list[EvalReport]] = {name: [] for name in ABLATIONS}
    results = []
    for seed in seeds:
        stages = config.seeded(seed)
        res = run_all(banks, stages)
        runs["Full"].append(res.test_report)
        runs["w/o Iteration"].append(evaluate_bank(res.distilled, res.stage3_predictor, banks.test))
        runs["w/o Profile (Inference)"].append(evaluate_bank(None, res.stage3_predictor, banks.test,
                                                             zero_profile=True))
        runs["w/o Profile"].append(evaluate_bank(None, train_stage(None, banks.train, stages.predictor),
                                                 banks.test, zero_profile=True))
        results.append(res)
        log.info("seed %d: test acc %.4f", seed, res.test_report.acc)
    return runs, results
