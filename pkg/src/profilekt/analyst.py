"""Analyst: per-KC statistics, the stochastic structured-profile policy, teacher labels and distillation.

A profile assigns one label to each of ``2 * n_kcs + 1`` slots: a mastery and a trend
label per observed KC plus one outlook label for the next question.  Every slot is a
categorical draw from ``softmax(W @ phi / tau)`` with ``W`` shared across KCs, which
gives exact log-probabilities for the reward-weighted updates in :mod:`profilekt.iteration`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DEFAULT_DIFFICULTY, InteractionRecord

MASTERY_LABELS = ("Struggling", "Inconsistent", "Developing", "Proficient", "Mastered")
TREND_LABELS = ("Declining", "Flat", "Improving")
OUTLOOK_LABELS = ("Challenge", "Stretch", "Consolidation", "Confident")
HEADS = ("mastery", "trend", "outlook")
HEAD_LABELS = {"mastery": MASTERY_LABELS, "trend": TREND_LABELS, "outlook": OUTLOOK_LABELS}

FEATURE_DIM = 8
UNSEEN_KC_RATE = 0.5
TREND_MARGIN = 0.15
# "consistent with" the difficulty at which the student failed before
CHALLENGE_TOLERANCE = 0.05


@dataclass(frozen=True)
class KCStats:
    kc_id: str
    attempts: int
    correct: int
    min_difficulty: float
    max_difficulty: float
    mean_difficulty: float
    first_half_rate: float
    second_half_rate: float
    last_outcome: bool
    min_failed_difficulty: float | None = None

    @property
    def rate(self) -> float:
        return self.correct / self.attempts

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "KCStats":
        return cls(**d)


@dataclass(frozen=True)
class NextQuestion:
    kc_ids: tuple[str, ...]
    difficulty: float

    @property
    def target_kc(self) -> str:
        return self.kc_ids[0]


@dataclass
class KCAssessment:
    kc_id: str
    mastery: str
    trend: str
    stats: KCStats | None = None


@dataclass
class StructuredProfile:
    kcs: list[KCAssessment]
    outlook: str
    next_question: NextQuestion | None = None
    text: str | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def n_slots(self) -> int:
        return 2 * len(self.kcs) + 1

    def assessment(self, kc_id: str) -> KCAssessment | None:
        for a in self.kcs:
            if a.kc_id == kc_id:
                return a
        return None

    def labels(self) -> tuple[list[str], list[str], str]:
        return [a.mastery for a in self.kcs], [a.trend for a in self.kcs], self.outlook

    def to_dict(self) -> dict:
        return {
            "kcs": [{"kc_id": a.kc_id, "mastery": a.mastery, "trend": a.trend,
                     "stats": a.stats.to_dict() if a.stats else None} for a in self.kcs],
            "outlook": self.outlook,
            "next_question": None if self.next_question is None else
            {"kc_ids": list(self.next_question.kc_ids), "difficulty": self.next_question.difficulty},
            "text": self.text,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredProfile":
        nq = d.get("next_question")
        return cls(
            kcs=[KCAssessment(a["kc_id"], a["mastery"], a["trend"],
                              KCStats.from_dict(a["stats"]) if a.get("stats") else None) for a in d["kcs"]],
            outlook=d["outlook"],
            next_question=None if nq is None else NextQuestion(tuple(nq["kc_ids"]), nq["difficulty"]),
            text=d.get("text"),
            warnings=list(d.get("warnings", [])),
        )


def _difficulty(r: InteractionRecord) -> float:
    return DEFAULT_DIFFICULTY if r.difficulty is None else r.difficulty


def _stats_for(kc: str, outcomes: list[bool], diffs: list[float]) -> KCStats:
    n = len(outcomes)
    h = n // 2
    first = outcomes[:h] or outcomes
    second = outcomes[h:]
    failed = [d for d, o in zip(diffs, outcomes) if not o]
    return KCStats(
        kc_id=kc,
        attempts=n,
        correct=sum(outcomes),
        min_difficulty=min(diffs),
        max_difficulty=max(diffs),
        mean_difficulty=sum(diffs) / n,
        first_half_rate=sum(first) / len(first),
        second_half_rate=sum(second) / len(second),
        last_outcome=outcomes[-1],
        min_failed_difficulty=min(failed) if failed else None,
    )


def extract_kc_stats(history: Sequence[InteractionRecord]) -> list[KCStats]:
    """One :class:`KCStats` per distinct KC in first-appearance order.

    Halves split each KC's own attempts at ``n // 2``; a single attempt counts in both.
    """
    if not history:
        raise ValueError("history must be non-empty")
    outcomes: dict[str, list[bool]] = {}
    diffs: dict[str, list[float]] = {}
    for r in history:
        for kc in r.kc_ids:
            outcomes.setdefault(kc, []).append(r.correct)
            diffs.setdefault(kc, []).append(_difficulty(r))
    return [_stats_for(kc, outcomes[kc], diffs[kc]) for kc in outcomes]


def next_question_of(record: InteractionRecord) -> NextQuestion:
    return NextQuestion(record.kc_ids, _difficulty(record))


def slot_features(stats: KCStats | None, target: NextQuestion | None = None) -> np.ndarray:
    """Feature vector for a KC slot, or for the outlook slot when ``target`` is given.

    For the outlook slot ``stats`` are those of the target KC (``None`` if unseen).
    """
    phi = np.zeros(FEATURE_DIM)
    phi[0] = 1.0
    if stats is not None:
        phi[1] = stats.rate
        phi[2] = min(stats.attempts, 10) / 10
        phi[3] = stats.mean_difficulty
        phi[4] = stats.second_half_rate - stats.first_half_rate
        phi[5] = float(stats.last_outcome)
    if target is not None:
        phi[6] = target.difficulty
        phi[7] = stats.rate if stats is not None else UNSEEN_KC_RATE
    return phi


def target_stats(stats: Sequence[KCStats], target: NextQuestion) -> KCStats | None:
    for s in stats:
        if s.kc_id == target.target_kc:
            return s
    return None


# ---------------------------------------------------------------------------
# vectorised slot batches


@dataclass
class SlotBatch:
    """Slot features of several (history, next question) inputs stacked row-wise.

    KC slot rows feed both the mastery and the trend head; ``kc_owner`` maps each
    row back to its input index.
    """

    kc_phi: np.ndarray
    kc_owner: np.ndarray
    outlook_phi: np.ndarray

    @property
    def size(self) -> int:
        return self.outlook_phi.shape[0]

    @classmethod
    def build(cls, inputs: Sequence[tuple[Sequence[KCStats], NextQuestion]]) -> "SlotBatch":
        kc_rows, owners, outlook_rows = [], [], []
        for i, (stats, nq) in enumerate(inputs):
            for s in stats:
                kc_rows.append(slot_features(s))
                owners.append(i)
            outlook_rows.append(slot_features(target_stats(stats, nq), nq))
        return cls(
            kc_phi=np.array(kc_rows).reshape(-1, FEATURE_DIM),
            kc_owner=np.array(owners, dtype=np.int64),
            outlook_phi=np.array(outlook_rows).reshape(-1, FEATURE_DIM),
        )

    def kc_rows(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """KC-slot row indices of inputs ``idx`` and the per-input row counts."""
        idx = np.asarray(idx, dtype=np.int64)
        bounds = np.searchsorted(self.kc_owner, np.arange(self.size + 1))
        counts = bounds[idx + 1] - bounds[idx]
        if len(idx) == 0:
            return np.zeros(0, dtype=np.int64), counts
        starts = np.repeat(bounds[idx] - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        return starts + np.arange(counts.sum()), counts

    def take(self, idx: np.ndarray) -> "SlotBatch":
        """Sub-batch of inputs ``idx`` (in that order)."""
        idx = np.asarray(idx, dtype=np.int64)
        sel, counts = self.kc_rows(idx)
        return SlotBatch(self.kc_phi[sel], np.repeat(np.arange(len(idx)), counts), self.outlook_phi[idx])


@dataclass
class SlotLabels:
    mastery: np.ndarray
    trend: np.ndarray
    outlook: np.ndarray

    def take(self, batch: SlotBatch, idx: np.ndarray) -> "SlotLabels":
        sel, _ = batch.kc_rows(idx)
        return SlotLabels(self.mastery[sel], self.trend[sel], self.outlook[np.asarray(idx, dtype=np.int64)])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class AnalystPolicy:
    W_mastery: np.ndarray
    W_trend: np.ndarray
    W_outlook: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("temperature must be positive")
        for name, W, k in self._heads():
            if W.shape != (k, FEATURE_DIM):
                raise ValueError(f"{name} weights must have shape {(k, FEATURE_DIM)}, got {W.shape}")
            if not np.all(np.isfinite(W)):
                raise ValueError(f"{name} weights are not finite")

    def _heads(self):
        return (("mastery", self.W_mastery, len(MASTERY_LABELS)),
                ("trend", self.W_trend, len(TREND_LABELS)),
                ("outlook", self.W_outlook, len(OUTLOOK_LABELS)))

    @classmethod
    def zeros(cls, tau: float = 1.0) -> "AnalystPolicy":
        return cls(np.zeros((5, FEATURE_DIM)), np.zeros((3, FEATURE_DIM)), np.zeros((4, FEATURE_DIM)), tau)

    def copy(self) -> "AnalystPolicy":
        return AnalystPolicy(self.W_mastery.copy(), self.W_trend.copy(), self.W_outlook.copy(), self.tau)

    def weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.W_mastery, self.W_trend, self.W_outlook

    def flat(self) -> np.ndarray:
        return np.concatenate([W.ravel() for W in self.weights()])

    def with_flat(self, theta: np.ndarray) -> "AnalystPolicy":
        a, b = 5 * FEATURE_DIM, 8 * FEATURE_DIM
        return AnalystPolicy(theta[:a].reshape(5, -1).copy(), theta[a:b].reshape(3, -1).copy(),
                             theta[b:].reshape(4, -1).copy(), self.tau)

    def log_probs(self, batch: SlotBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-row log-softmax tables for the three heads."""
        return (_log_softmax(batch.kc_phi @ self.W_mastery.T / self.tau),
                _log_softmax(batch.kc_phi @ self.W_trend.T / self.tau),
                _log_softmax(batch.outlook_phi @ self.W_outlook.T / self.tau))

    def to_dict(self) -> dict:
        return {"tau": self.tau, "W_mastery": self.W_mastery.tolist(),
                "W_trend": self.W_trend.tolist(), "W_outlook": self.W_outlook.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalystPolicy":
        return cls(np.array(d["W_mastery"], dtype=float), np.array(d["W_trend"], dtype=float),
                   np.array(d["W_outlook"], dtype=float), float(d["tau"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def sample_labels(policy: AnalystPolicy, batch: SlotBatch, rng: np.random.Generator | None,
                  greedy: bool = False) -> SlotLabels:
    """Draw one label per slot; ``greedy`` takes the argmax and ignores ``rng``."""
    lm, lt, lo = policy.log_probs(batch)
    if greedy:
        return SlotLabels(lm.argmax(axis=1), lt.argmax(axis=1), lo.argmax(axis=1))
    return SlotLabels(*(_draw(np.exp(lp), rng) for lp in (lm, lt, lo)))


def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def batch_log_prob(policy: AnalystPolicy, batch: SlotBatch, labels: SlotLabels) -> np.ndarray:
    """log pi(profile | input) for every input in the batch."""
    lm, lt, lo = policy.log_probs(batch)
    rows = np.arange(len(batch.kc_owner))
    kc_part = lm[rows, labels.mastery] + lt[rows, labels.trend]
    total = lo[np.arange(batch.size), labels.outlook]
    return total + np.bincount(batch.kc_owner, weights=kc_part, minlength=batch.size)


def weighted_nll_grad(policy: AnalystPolicy, batch: SlotBatch, labels: SlotLabels,
                      weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradient of ``sum_i weights[i] * -log pi(profile_i | input_i)``.

    Per slot this is ``(softmax - onehot(label)) outer phi / tau`` scaled by the weight.
    """
    weights = np.asarray(weights, dtype=float)
    lm, lt, lo = policy.log_probs(batch)
    row_w = weights[batch.kc_owner]
    grads = []
    for lp, lab, phi, w in ((lm, labels.mastery, batch.kc_phi, row_w),
                            (lt, labels.trend, batch.kc_phi, row_w),
                            (lo, labels.outlook, batch.outlook_phi, weights)):
        delta = np.exp(lp)
        delta[np.arange(len(lab)), lab] -= 1.0
        grads.append((delta * w[:, None]).T @ phi / policy.tau)
    return tuple(grads)


def apply_step(policy: AnalystPolicy, grads, lr: float) -> AnalystPolicy:
    gm, gt, go = grads
    return AnalystPolicy(policy.W_mastery - lr * gm, policy.W_trend - lr * gt,
                         policy.W_outlook - lr * go, policy.tau)


# ---------------------------------------------------------------------------
# profile-level API


def profile_to_labels(profile: StructuredProfile) -> SlotLabels:
    try:
        return SlotLabels(
            np.array([MASTERY_LABELS.index(a.mastery) for a in profile.kcs], dtype=np.int64),
            np.array([TREND_LABELS.index(a.trend) for a in profile.kcs], dtype=np.int64),
            np.array([OUTLOOK_LABELS.index(profile.outlook)], dtype=np.int64),
        )
    except ValueError as exc:
        raise ValueError(f"profile label outside the schema: {exc}") from None


def profile_from_labels(stats: Sequence[KCStats], next_q: NextQuestion | None,
                        mastery: Sequence[int], trend: Sequence[int], outlook: int) -> StructuredProfile:
    return StructuredProfile(
        kcs=[KCAssessment(s.kc_id, MASTERY_LABELS[m], TREND_LABELS[t], s)
             for s, m, t in zip(stats, mastery, trend)],
        outlook=OUTLOOK_LABELS[outlook],
        next_question=next_q,
    )


def sample_profile(policy: AnalystPolicy, stats: Sequence[KCStats], next_q: NextQuestion,
                   rng: np.random.Generator | None, greedy: bool = False) -> tuple[StructuredProfile, float]:
    batch = SlotBatch.build([(stats, next_q)])
    labels = sample_labels(policy, batch, rng, greedy=greedy)
    profile = profile_from_labels(stats, next_q, labels.mastery, labels.trend, int(labels.outlook[0]))
    return profile, float(batch_log_prob(policy, batch, labels)[0])


def profile_log_prob(policy: AnalystPolicy, profile: StructuredProfile, stats: Sequence[KCStats],
                     next_q: NextQuestion) -> float:
    if [a.kc_id for a in profile.kcs] != [s.kc_id for s in stats]:
        raise ValueError("profile KC slots do not match the statistics")
    labels = profile_to_labels(profile)
    return float(batch_log_prob(policy, SlotBatch.build([(stats, next_q)]), labels)[0])


# ---------------------------------------------------------------------------
# rule-based teacher and curation


def _halves_disagree(s: KCStats) -> bool:
    return (s.first_half_rate >= 0.5) != (s.second_half_rate >= 0.5)


def teacher_mastery(s: KCStats) -> str:
    r = s.rate
    if s.attempts >= 3 and r >= 0.9:
        return "Mastered"
    if r >= 0.7:
        return "Proficient"
    # inconsistency is checked before "Developing" so a right-then-wrong pair reads as mixed
    if r >= 0.3 and _halves_disagree(s):
        return "Inconsistent"
    if r >= 0.5:
        return "Developing"
    return "Struggling"


def teacher_trend(s: KCStats) -> str:
    delta = s.second_half_rate - s.first_half_rate
    if delta > TREND_MARGIN:
        return "Improving"
    if delta < -TREND_MARGIN:
        return "Declining"
    return "Flat"


def teacher_outlook(target: KCStats | None, next_q: NextQuestion) -> str:
    if target is None:
        return "Stretch"
    mastery = teacher_mastery(target)
    if (mastery in ("Struggling", "Inconsistent") and target.min_failed_difficulty is not None
            and next_q.difficulty >= target.min_failed_difficulty - CHALLENGE_TOLERANCE):
        return "Challenge"
    if mastery in ("Proficient", "Mastered") and next_q.difficulty <= target.mean_difficulty:
        return "Confident"
    if mastery == "Developing":
        return "Consolidation"
    return "Stretch"


def teacher_annotate(stats: Sequence[KCStats], next_q: NextQuestion) -> StructuredProfile:
    return StructuredProfile(
        kcs=[KCAssessment(s.kc_id, teacher_mastery(s), teacher_trend(s), s) for s in stats],
        outlook=teacher_outlook(target_stats(stats, next_q), next_q),
        next_question=next_q,
    )


def consistency_violations(profile: StructuredProfile) -> list[str]:
    problems = []
    for a in profile.kcs:
        if a.mastery not in MASTERY_LABELS or a.trend not in TREND_LABELS:
            problems.append(f"{a.kc_id}: label outside schema")
            continue
        s = a.stats
        if s is None:
            continue
        if a.mastery in ("Mastered", "Proficient") and s.rate < 0.5:
            problems.append(f"{a.kc_id}: {a.mastery} with correct rate {s.rate:.2f}")
        if a.mastery == "Struggling" and s.rate >= 0.7:
            problems.append(f"{a.kc_id}: Struggling with correct rate {s.rate:.2f}")
        if a.trend == "Improving" and s.second_half_rate < s.first_half_rate:
            problems.append(f"{a.kc_id}: Improving while the later rate fell")
        if a.trend == "Declining" and s.second_half_rate > s.first_half_rate:
            problems.append(f"{a.kc_id}: Declining while the later rate rose")
    if profile.outlook not in OUTLOOK_LABELS:
        problems.append("outlook label outside schema")
    elif profile.outlook == "Confident" and profile.next_question is not None:
        target = profile.assessment(profile.next_question.target_kc)
        if target is not None and target.stats is not None and target.stats.rate < 0.5:
            problems.append("Confident outlook on a KC answered mostly wrong")
    return problems


def curate(profiles: Sequence[StructuredProfile]) -> list[StructuredProfile]:
    """Keep only profiles whose labels agree with their own statistics."""
    return [p for p in profiles if not consistency_violations(p)]


# ---------------------------------------------------------------------------
# distillation


@dataclass
class DistillConfig:
    epochs: int = 10
    lr: float = 0.02
    warmup_ratio: float = 0.1
    batch_size: int = 32
    seed: int = 0


def warmup_lr(base: float, step: int, total_steps: int, warmup_ratio: float) -> float:
    warm = math.ceil(warmup_ratio * total_steps)
    if warm <= 0 or step >= warm:
        return base
    return base * (step + 1) / warm


def distill_loss(policy: AnalystPolicy, batch: SlotBatch, labels: SlotLabels) -> float:
    return float(-batch_log_prob(policy, batch, labels).sum())


def distill_fit(policy: AnalystPolicy, batch: SlotBatch, labels: SlotLabels,
                config: DistillConfig | None = None) -> tuple[AnalystPolicy, list[float]]:
    """Minimise summed slot cross-entropy against teacher labels by minibatch gradient descent.

    Minibatches are drawn from a seeded permutation and kept in index order, so a single
    full-batch epoch is order-independent.  Returns the fitted copy and per-epoch losses.
    """
    config = config or DistillConfig()
    n = batch.size
    if n == 0:
        raise ValueError("distillation needs at least one (stats, profile) pair")
    rng = np.random.default_rng(config.seed)
    bs = max(1, config.batch_size)
    per_epoch = math.ceil(n / bs)
    total = per_epoch * config.epochs
    policy = policy.copy()
    losses = []
    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for b in range(per_epoch):
            idx = np.sort(perm[b * bs:(b + 1) * bs])
            sub = batch.take(idx)
            grads = weighted_nll_grad(policy, sub, labels.take(batch, idx), np.ones(len(idx)))
            policy = apply_step(policy, grads, warmup_lr(config.lr, step, total, config.warmup_ratio))
            step += 1
        losses.append(distill_loss(policy, batch, labels))
    return policy, losses


def distill_from_profiles(policy: AnalystPolicy,
                          pairs: Sequence[tuple[Sequence[KCStats], StructuredProfile]],
                          config: DistillConfig | None = None) -> tuple[AnalystPolicy, list[float]]:
    """Profile-object front end of :func:`distill_fit`."""
    batch = SlotBatch.build([(stats, p.next_question) for stats, p in pairs])
    labs = [profile_to_labels(p) for _, p in pairs]
    labels = SlotLabels(np.concatenate([l.mastery for l in labs]),
                        np.concatenate([l.trend for l in labs]),
                        np.concatenate([l.outlook for l in labs]))
    return distill_fit(policy, batch, labels, config)
