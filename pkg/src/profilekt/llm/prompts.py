"""Prompt construction for the two roles (history ternaries plus the next-question pair)."""

from __future__ import annotations

from typing import Sequence

from ..analyst import NextQuestion
from ..data import InteractionRecord

ANALYST_INSTRUCTIONS = (
    "Below is a student's practice history, oldest first. Each item is a triple of "
    "(knowledge concepts of the question, question difficulty as one minus its pass rate, "
    "whether the student answered correctly). The last line gives the knowledge concepts "
    "and difficulty of the question the student will attempt next. Write a profile of the "
    "student's knowledge state: one numbered section per knowledge concept describing "
    "mastery and how performance changed over time, then a 'Projected Next Question' "
    "section assessing the upcoming question, then 'Recommendations'."
)

PREDICTOR_INSTRUCTIONS = (
    "Below is a student's practice history, oldest first, as (knowledge concepts, difficulty, "
    "correct) triples, followed by a profile of the student and the next question. Decide "
    "whether the student will answer the next question correctly. Reply with exactly one "
    "word: True or False."
)


def _kcs(kc_ids: Sequence[str]) -> str:
    return "[" + ", ".join(repr(k) for k in kc_ids) + "]"


def _diff(x: float | None) -> str:
    return "0.50" if x is None else f"{x:.2f}"


def format_history(history: Sequence[InteractionRecord]) -> str:
    return ", ".join(f"({_kcs(r.kc_ids)}, {_diff(r.difficulty)}, {r.correct})" for r in history)


def format_next(next_q: NextQuestion) -> str:
    return f"({_kcs(next_q.kc_ids)}, {_diff(next_q.difficulty)})"


def analyst_messages(history: Sequence[InteractionRecord], next_q: NextQuestion) -> list[dict]:
    user = (f"The student's historical response sequence:\n{format_history(history)}\n"
            f"Next Question: {format_next(next_q)}")
    return [{"role": "system", "content": ANALYST_INSTRUCTIONS}, {"role": "user", "content": user}]


def predictor_messages(history: Sequence[InteractionRecord], profile_text: str | None,
                       next_q: NextQuestion) -> list[dict]:
    parts = [f"The student's historical response sequence:\n{format_history(history)}"]
    if profile_text:
        parts.append(f"Student profile:\n{profile_text.strip()}")
    parts.append(f"Next Question: {format_next(next_q)}")
    return [{"role": "system", "content": PREDICTOR_INSTRUCTIONS}, {"role": "user", "content": "\n".join(parts)}]
