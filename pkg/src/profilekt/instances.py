"""Prediction instances (history prefix, next exercise, outcome) precomputed in bulk.

Slot features and history features do not depend on any model, so they are built once
per split; profiles and predictor inputs are then cheap array operations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analyst import (
    MASTERY_LABELS,
    TREND_LABELS,
    AnalystPolicy,
    KCStats,
    NextQuestion,
    SlotBatch,
    SlotLabels,
    StructuredProfile,
    _stats_for,
    next_question_of,
    profile_from_labels,
    profile_to_labels,
    sample_labels,
    teacher_annotate,
)
from .data import DEFAULT_DIFFICULTY, SequenceWindow
from .predictor import BASE_DIM, DIM, UNSEEN_MASTERY, UNSEEN_TREND, base_features

MIN_HISTORY = 4


@dataclass
class InstanceBank:
    slots: SlotBatch
    target_offset: np.ndarray  # position of the target KC among an instance's KC slots, -1 if unseen
    base: np.ndarray
    y: np.ndarray
    history_len: np.ndarray
    window_ids: list[str]
    stats: list[list[KCStats]]
    next_q: list[NextQuestion]

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "InstanceBank":
        idx = np.asarray(idx, dtype=np.int64)
        return InstanceBank(
            self.slots.take(idx), self.target_offset[idx], self.base[idx], self.y[idx],
            self.history_len[idx], [self.window_ids[i] for i in idx],
            [self.stats[i] for i in idx], [self.next_q[i] for i in idx],
        )

    def labels(self, policy: AnalystPolicy, rng: np.random.Generator | None = None,
               greedy: bool = True) -> SlotLabels:
        return sample_labels(policy, self.slots, rng, greedy=greedy)

    def teacher_labels(self) -> SlotLabels:
        labs = [profile_to_labels(teacher_annotate(s, q)) for s, q in zip(self.stats, self.next_q)]
        return SlotLabels(np.concatenate([l.mastery for l in labs]).astype(np.int64),
                          np.concatenate([l.trend for l in labs]).astype(np.int64),
                          np.concatenate([l.outlook for l in labs]).astype(np.int64))

    def features(self, labels: SlotLabels | None) -> np.ndarray:
        """Predictor inputs; ``labels=None`` zeroes the profile block."""
        X = np.zeros((len(self), DIM))
        X[:, :BASE_DIM] = self.base
        if labels is None:
            return X
        starts = np.searchsorted(self.slots.kc_owner, np.arange(len(self)))
        seen = self.target_offset >= 0
        rows = starts + np.maximum(self.target_offset, 0)
        mastery = np.where(seen, labels.mastery[rows], MASTERY_LABELS.index(UNSEEN_MASTERY))
        trend = np.where(seen, labels.trend[rows], TREND_LABELS.index(UNSEEN_TREND))
        n = np.arange(len(self))
        X[n, BASE_DIM + mastery] = 1.0
        X[n, BASE_DIM + len(MASTERY_LABELS) + trend] = 1.0
        X[n, BASE_DIM + len(MASTERY_LABELS) + len(TREND_LABELS) + labels.outlook] = 1.0
        return X

    def profile(self, i: int, labels: SlotLabels) -> StructuredProfile:
        sel, _ = self.slots.kc_rows(np.array([i]))
        return profile_from_labels(self.stats[i], self.next_q[i], labels.mastery[sel], labels.trend[sel],
                                   int(labels.outlook[i]))


def _window_instances(window: SequenceWindow, min_history: int, final_only: bool):
    records = window.records
    outcomes: dict[str, list[bool]] = {}
    diffs: dict[str, list[float]] = {}
    start = len(records) - 1 if final_only else min_history
    for t, rec in enumerate(records):
        if t >= max(start, 1):
            stats = [_stats_for(kc, outcomes[kc], diffs[kc]) for kc in outcomes]
            nq = next_question_of(rec)
            yield records[:t], stats, nq, rec.correct
        for kc in rec.kc_ids:
            outcomes.setdefault(kc, []).append(rec.correct)
            diffs.setdefault(kc, []).append(DEFAULT_DIFFICULTY if rec.difficulty is None else rec.difficulty)


def build_bank(windows: Sequence[SequenceWindow], min_history: int = MIN_HISTORY,
               final_only: bool = False) -> InstanceBank:
    """Instances at every position with at least ``min_history`` prior interactions,
    or only at each window's final position when ``final_only``."""
    all_stats, all_nq, bases, ys, lens, ids, offsets = [], [], [], [], [], [], []
    for w in windows:
        for history, stats, nq, y in _window_instances(w, min_history, final_only):
            all_stats.append(stats)
            all_nq.append(nq)
            bases.append(base_features(history, nq))
            ys.append(float(y))
            lens.append(len(history))
            ids.append(w.window_id)
            kc_ids = [s.kc_id for s in stats]
            offsets.append(kc_ids.index(nq.target_kc) if nq.target_kc in kc_ids else -1)
    slots = SlotBatch.build(list(zip(all_stats, all_nq)))
    return InstanceBank(
        slots=slots,
        target_offset=np.array(offsets, dtype=np.int64),
        base=np.array(bases).reshape(-1, BASE_DIM),
        y=np.array(ys),
        history_len=np.array(lens, dtype=np.int64),
        window_ids=ids,
        stats=all_stats,
        next_q=all_nq,
    )

