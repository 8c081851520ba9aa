"""LLM-backed Analyst and Predictor calls."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

from ..analyst import NextQuestion, StructuredProfile, extract_kc_stats
from ..data import InteractionRecord
from ..predictor import PredictionOutcome
from ..profile_text import parse_profile
from .client import BackendConfig, ChatClient, Completion
from .prompts import analyst_messages, predictor_messages


class PredictionError(ValueError):
    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


@contextmanager
def _client(backend: BackendConfig | ChatClient):
    if isinstance(backend, ChatClient):
        yield backend
    else:
        with ChatClient(backend) as c:
            yield c


def _ask(backend: BackendConfig | ChatClient, messages: list[dict]) -> Completion:
    with _client(backend) as client:
        return client.complete(messages)


def llm_generate_profile(backend: BackendConfig | ChatClient, history: Sequence[InteractionRecord],
                         next_q: NextQuestion) -> StructuredProfile:
    """Ask the backend for a profile and parse it; raises ProfileParseError with the raw text."""
    completion = _ask(backend, analyst_messages(history, next_q))
    return parse_profile(completion.text, stats=extract_kc_stats(history), next_question=next_q)


def parse_answer(text: str) -> bool:
    token = text.strip().lower()
    if token == "true":
        return True
    if token == "false":
        return False
    raise PredictionError(f"expected 'True' or 'False', got {text!r}", text)


def llm_predict(backend: BackendConfig | ChatClient, history: Sequence[InteractionRecord], profile_text: str | None,
                next_q: NextQuestion) -> PredictionOutcome:
    completion = _ask(backend, predictor_messages(history, profile_text, next_q))
    label = parse_answer(completion.text)
    return PredictionOutcome(1.0 if label else 0.0, label)
