"""Final-position metrics (ACC, F1, ACC on long sequences) and five-run aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LONG_THRESHOLD = 15
N_RUNS = 5


@dataclass(frozen=True)
class EvalInstance:
    window_id: str
    history_len: int
    predicted: bool
    truth: bool


@dataclass
class EvalReport:
    acc: float
    f1: float
    acc_len_gt15: float | None
    n: int
    n_long: int
    per_seed: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"acc": self.acc, "f1": self.f1, "acc_len_gt15": self.acc_len_gt15,
                "n": self.n, "n_long": self.n_long, "per_seed": self.per_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["acc"], d["f1"], d["acc_len_gt15"], d["n"], d["n_long"], list(d.get("per_seed", [])))


def _require(instances: Sequence[EvalInstance]) -> None:
    if not instances:
        raise ValueError("no instances to evaluate")


def accuracy(instances: Sequence[EvalInstance]) -> float:
    _require(instances)
    return sum(i.predicted == i.truth for i in instances) / len(instances)


def f1(instances: Sequence[EvalInstance]) -> float:
    """F1 of the positive class (answered correctly); 0 when precision + recall is 0."""
    _require(instances)
    tp = sum(i.predicted and i.truth for i in instances)
    fp = sum(i.predicted and not i.truth for i in instances)
    fn = sum(not i.predicted and i.truth for i in instances)
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def is_long(instance: EvalInstance) -> bool:
    # the predicted item counts toward the length
    return instance.history_len + 1 > LONG_THRESHOLD


def acc_long(instances: Sequence[EvalInstance]) -> float | None:
    long = [i for i in instances if is_long(i)]
    return accuracy(long) if long else None


def report(instances: Sequence[EvalInstance]) -> EvalReport:
    _require(instances)
    return EvalReport(accuracy(instances), f1(instances), acc_long(instances), len(instances),
                      sum(map(is_long, instances)))


def instances_from_arrays(window_ids, history_len, predicted, truth) -> list[EvalInstance]:
    return [EvalInstance(w, int(h), bool(p), bool(t))
            for w, h, p, t in zip(window_ids, history_len, predicted, truth)]


def acc_f1_arrays(predicted: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Vectorised accuracy and F1 for the training loop."""
    predicted, truth = np.asarray(predicted, bool), np.asarray(truth, bool)
    acc = float(np.mean(predicted == truth))
    tp = int(np.sum(predicted & truth))
    denom = int(np.sum(predicted)) + int(np.sum(truth))
    return acc, (2 * tp / denom if tp else 0.0)


def mean_report(reports: Sequence[EvalReport]) -> EvalReport:
    """Metric-wise mean over runs; ACC_len>15 only when every run has long instances."""
    if not reports:
        raise ValueError("no reports to average")
    longs = [r.acc_len_gt15 for r in reports if r.acc_len_gt15 is not None]
    return EvalReport(
        acc=float(np.mean([r.acc for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        acc_len_gt15=float(np.mean(longs)) if len(longs) == len(reports) else None,
        n=reports[0].n,
        n_long=reports[0].n_long,
        per_seed=[{"acc": r.acc, "f1": r.f1, "acc_len_gt15": r.acc_len_gt15, "n": r.n, "n_long": r.n_long}
                  for r in reports],
    )


def five_run_mean(reports: Sequence[EvalReport]) -> EvalReport:
    if len(reports) != N_RUNS:
        raise ValueError(f"expected {N_RUNS} run reports, got {len(reports)}")
    return mean_report(reports)


def _cell(x: float | None) -> str:
    return "   -  " if x is None else f"{x:.3f}"


def format_table(rows: dict[str, dict[str, EvalReport]]) -> str:
    """Plain-text table: one row per method, ACC / ACC_len>15 / F1 column triple per dataset."""
    datasets = sorted({d for per in rows.values() for d in per})
    name_w = max([len("Method")] + [len(m) for m in rows])
    group = "  ".join(f"{'ACC':>6} {'ACC>15':>6} {'F1':>6}" for _ in datasets)
    head1 = " " * name_w + "  " + "  ".join(f"{d:^20}" for d in datasets)
    head2 = f"{'Method':<{name_w}}  {group}"
    lines = [head1.rstrip(), head2, "-" * len(head2)]
    for method, per in rows.items():
        cells = []
        for d in datasets:
            r = per.get(d)
            cells.append(" ".join(f"{_cell(v):>6}" for v in
                                  ((r.acc, r.acc_len_gt15, r.f1) if r else (None, None, None))))
        lines.append(f"{method:<{name_w}}  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def dump_report(r: EvalReport) -> str:
    return json.dumps(r.to_dict(), sort_keys=True, indent=1)
