"""OpenAI-compatible chat backends for the Analyst and Predictor roles."""

from .client import BackendConfig, BackendError, ChatClient, Completion
from .roles import PredictionError, llm_generate_profile, llm_predict

__all__ = [
    "BackendConfig",
    "BackendError",
    "ChatClient",
    "Completion",
    "PredictionError",
    "llm_generate_profile",
    "llm_predict",
]
