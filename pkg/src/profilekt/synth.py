"""BKT-style synthetic students with known latent mastery (no forgetting)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import TextIO

import numpy as np

from .data import InteractionRecord, StudentSequence, write_interactions


@dataclass
class SynthStudentParams:
    p_L0: dict[str, float]
    p_T: dict[str, float]
    p_S: float
    p_G: float

    def validate(self) -> None:
        for name, table in (("p_L0", self.p_L0), ("p_T", self.p_T)):
            for kc, p in table.items():
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"{name}[{kc}]={p} outside [0, 1]")
        if not 0.0 <= self.p_S < 1.0 or not 0.0 <= self.p_G < 1.0:
            raise ValueError(f"slip/guess must lie in [0, 1): p_S={self.p_S}, p_G={self.p_G}")
        if self.p_S + self.p_G >= 1.0:
            raise ValueError("p_S + p_G must be < 1")


@dataclass
class SynthTrace:
    sequence: StudentSequence
    kc_pool: list[str]
    # mastery[t, j]: whether kc_pool[j] was mastered when step t was attempted
    mastery: np.ndarray

    def latent_rows(self) -> list[dict]:
        return [
            {"student_id": self.sequence.student_id, "step": t,
             "mastered": {kc: bool(m) for kc, m in zip(self.kc_pool, row)}}
            for t, row in enumerate(self.mastery)
        ]


@dataclass
class CohortConfig:
    """Sampler for a cohort; per-student values are drawn uniformly from the ranges.

    Defaults model a curriculum: three KCs active at a time, a new one every 40 steps,
    no prior mastery, low slip/guess.  Mastery transitions then keep happening
    throughout each sequence instead of only at its start.
    """

    n_kcs: int = 24
    kcs_per_student: int = 20
    questions_per_kc: int = 12
    n_steps: tuple[int, int] = (600, 800)
    stay_prob: float = 0.0
    active_kcs: int = 3
    advance_every: int = 40
    p_L0: tuple[float, float] = (0.0, 0.0)
    p_T: tuple[float, float] = (0.05, 0.15)
    p_S: tuple[float, float] = (0.02, 0.08)
    p_G: tuple[float, float] = (0.05, 0.15)
    kc_names: list[str] = field(default_factory=list)

    def kc_universe(self) -> list[str]:
        return list(self.kc_names) or [f"KC{j:02d}" for j in range(self.n_kcs)]


def generate_student(params: SynthStudentParams, kc_pool: list[str], n_steps: int, seed: int,
                     student_id: str = "s0", questions_per_kc: int = 10,
                     stay_prob: float = 0.0, active_kcs: int = 0, advance_every: int = 0) -> SynthTrace:
    """Simulate one student.

    KCs are drawn uniformly from the active part of ``kc_pool`` (all of it by default);
    with ``active_kcs`` and ``advance_every`` set, a window of ``active_kcs`` consecutive
    pool entries slides forward one KC every ``advance_every`` steps, like a curriculum.
    The previous KC is repeated with probability ``stay_prob`` while it is still active.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not kc_pool:
        raise ValueError("kc_pool must be non-empty")
    params.validate()
    rng = np.random.default_rng(seed)
    state = np.array([rng.random() < params.p_L0.get(kc, 0.0) for kc in kc_pool])
    learn = np.array([params.p_T.get(kc, 0.0) for kc in kc_pool])
    mastery = np.zeros((n_steps, len(kc_pool)), dtype=bool)
    records = []
    width = active_kcs if 0 < active_kcs < len(kc_pool) else len(kc_pool)
    j = -1
    for t in range(n_steps):
        lo = min(t // advance_every, len(kc_pool) - width) if advance_every > 0 else 0
        if j < lo or j >= lo + width or rng.random() >= stay_prob:
            j = lo + int(rng.integers(width))
        q = int(rng.integers(questions_per_kc))
        mastery[t] = state
        p_correct = 1.0 - params.p_S if state[j] else params.p_G
        correct = bool(rng.random() < p_correct)
        kc = kc_pool[j]
        records.append(InteractionRecord(student_id, f"{kc}-q{q:02d}", (kc,), correct, 1000 * (t + 1)))
        if not state[j] and rng.random() < learn[j]:
            state[j] = True
    return SynthTrace(StudentSequence(student_id, records), list(kc_pool), mastery)


def generate_cohort(n_students: int, config: CohortConfig | None = None, seed: int = 0) -> list[SynthTrace]:
    config = config or CohortConfig()
    universe = config.kc_universe()
    if config.kcs_per_student > len(universe):
        raise ValueError("kcs_per_student exceeds the KC universe")
    traces = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_students)):
        rng = np.random.default_rng(child)
        pool = [universe[j] for j in sorted(rng.choice(len(universe), config.kcs_per_student, replace=False))]
        params = SynthStudentParams(
            p_L0={kc: float(rng.uniform(*config.p_L0)) for kc in pool},
            p_T={kc: float(rng.uniform(*config.p_T)) for kc in pool},
            p_S=float(rng.uniform(*config.p_S)),
            p_G=float(rng.uniform(*config.p_G)),
        )
        n_steps = int(rng.integers(config.n_steps[0], config.n_steps[1] + 1))
        traces.append(generate_student(params, pool, n_steps, int(rng.integers(2**31)),
                                       student_id=f"u{i:04d}", questions_per_kc=config.questions_per_kc,
                                       stay_prob=config.stay_prob, active_kcs=config.active_kcs,
                                       advance_every=config.advance_every))
    return traces


def write_cohort(traces: list[SynthTrace], csv_out: TextIO, latent_out: TextIO) -> None:
    write_interactions((r for tr in traces for r in tr.sequence.records), csv_out)
    for tr in traces:
        for row in tr.latent_rows():
            latent_out.write(json.dumps(row, sort_keys=True) + "\n")


def cohort_config_dict(config: CohortConfig) -> dict:
    return asdict(config)
