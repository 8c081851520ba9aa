"""Run configuration: one flat JSON document, every key documented in ``KEY_DOCS``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .analyst import DistillConfig
from .instances import MIN_HISTORY
from .iteration import IterationConfig
from .llm import BackendConfig
from .pipeline import StageConfig
from .predictor import TrainConfig
from .synth import CohortConfig

BACKENDS = ("builtin", "llm")

KEY_DOCS = {
    "raw_csv": "interaction CSV for preprocess; empty means the synthetic cohort in <workspace>/raw",
    "workspace": "workspace directory",
    "dataset_name": "column label in evaluation tables",
    "seed": "master seed: split permutation, cohort generation and every stage",
    "eval_seeds": "seeds for the multi-run evaluation (five for the standard mean)",
    "analyst_backend": "builtin | llm",
    "predictor_backend": "builtin | llm",
    "llm_base_url": "OpenAI-compatible endpoint, including the /v1 prefix",
    "llm_model": "model name sent with each request",
    "llm_api_key_env": "environment variable holding the API key",
    "llm_top_p": "nucleus sampling for both roles",
    "analyst_temperature": "sampling temperature of the LLM Analyst",
    "predictor_temperature": "sampling temperature of the LLM Predictor",
    "llm_max_in_flight": "concurrent requests per client",
    "llm_max_attempts": "attempts per request, first try included",
    "synth_students": "cohort size",
    "synth_n_kcs": "size of the KC universe",
    "synth_kcs_per_student": "KCs each student practises",
    "synth_questions_per_kc": "distinct questions per KC",
    "synth_min_steps": "shortest student sequence",
    "synth_max_steps": "longest student sequence",
    "synth_active_kcs": "KCs open at once in the curriculum (0 = all)",
    "synth_advance_every": "steps between curriculum advances (0 = never)",
    "synth_stay_prob": "probability of repeating the previous KC",
    "synth_p_L0": "[lo, hi] range for initial mastery",
    "synth_p_T": "[lo, hi] range for the learning rate",
    "synth_p_S": "[lo, hi] range for slip",
    "synth_p_G": "[lo, hi] range for guess",
    "distill_epochs": "Analyst distillation epochs",
    "distill_lr": "Analyst distillation learning rate",
    "distill_warmup_ratio": "fraction of distillation steps with linear warmup",
    "distill_batch_size": "distillation minibatch (instances)",
    "distill_samples": "teacher-annotated training instances before curation",
    "predictor_epochs": "Predictor epochs",
    "predictor_lr": "Predictor learning rate",
    "predictor_warmup_ratio": "fraction of Predictor steps with linear warmup",
    "predictor_batch_size": "Predictor minibatch",
    "rounds": "iteration rounds",
    "k": "training instances sampled per round",
    "analyst_lr": "learning rate of the reward-weighted Analyst update",
    "kto_batch_size": "minibatch of the reward-weighted update",
    "kto_passes": "on-policy sweeps over the k instances per round",
    "min_history": "minimum prefix length of a training instance",
    "case_window": "window id for case-study; empty picks one automatically",
}


@dataclass
class RunConfig:
    raw_csv: str = ""
    workspace: str = "workspace"
    dataset_name: str = "synthetic"
    seed: int = 0
    eval_seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    analyst_backend: str = "builtin"
    predictor_backend: str = "builtin"
    llm_base_url: str = "http://127.0.0.1:8000/v1"
    llm_model: str = "local-model"
    llm_api_key_env: str = "OPENAI_API_KEY"
    llm_top_p: float = 0.7
    analyst_temperature: float = 0.95
    predictor_temperature: float = 0.0
    llm_max_in_flight: int = 4
    llm_max_attempts: int = 3
    synth_students: int = 200
    synth_n_kcs: int = 24
    synth_kcs_per_student: int = 20
    synth_questions_per_kc: int = 12
    synth_min_steps: int = 600
    synth_max_steps: int = 800
    synth_active_kcs: int = 3
    synth_advance_every: int = 40
    synth_stay_prob: float = 0.0
    synth_p_L0: list[float] = field(default_factory=lambda: [0.0, 0.0])
    synth_p_T: list[float] = field(default_factory=lambda: [0.05, 0.15])
    synth_p_S: list[float] = field(default_factory=lambda: [0.02, 0.08])
    synth_p_G: list[float] = field(default_factory=lambda: [0.05, 0.15])
    distill_epochs: int = 10
    distill_lr: float = 0.02
    distill_warmup_ratio: float = 0.1
    distill_batch_size: int = 32
    distill_samples: int = 3000
    predictor_epochs: int = 10
    predictor_lr: float = 1e-2
    predictor_warmup_ratio: float = 0.1
    predictor_batch_size: int = 32
    rounds: int = 3
    k: int = 1000
    analyst_lr: float = 1e-2
    kto_batch_size: int = 32
    kto_passes: int = 10
    min_history: int = MIN_HISTORY
    case_window: str = ""

    def __post_init__(self):
        for role in ("analyst_backend", "predictor_backend"):
            if getattr(self, role) not in BACKENDS:
                raise ValueError(f"{role} must be one of {BACKENDS}, got {getattr(self, role)!r}")
        if len(set(self.eval_seeds)) != len(self.eval_seeds):
            raise ValueError(f"eval_seeds must be distinct: {self.eval_seeds}")
        if not self.eval_seeds:
            raise ValueError("eval_seeds must not be empty")
        if self.synth_min_steps > self.synth_max_steps:
            raise ValueError("synth_min_steps exceeds synth_max_steps")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: Path | None, overrides: dict | None = None) -> "RunConfig":
        d = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        if not isinstance(d, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict({**d, **(overrides or {})})

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, exclude: tuple[str, ...] = ("workspace",)) -> str:
        """Hash of the settings that influence results (the workspace location does not)."""
        d = {k: v for k, v in self.to_dict().items() if k not in exclude}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def cohort(self) -> CohortConfig:
        return CohortConfig(
            n_kcs=self.synth_n_kcs, kcs_per_student=self.synth_kcs_per_student,
            questions_per_kc=self.synth_questions_per_kc,
            n_steps=(self.synth_min_steps, self.synth_max_steps), stay_prob=self.synth_stay_prob,
            active_kcs=self.synth_active_kcs, advance_every=self.synth_advance_every,
            p_L0=tuple(self.synth_p_L0), p_T=tuple(self.synth_p_T),
            p_S=tuple(self.synth_p_S), p_G=tuple(self.synth_p_G),
        )

    def stages(self, seed: int | None = None) -> StageConfig:
        seed = self.seed if seed is None else seed
        return StageConfig(
            distill=DistillConfig(self.distill_epochs, self.distill_lr, self.distill_warmup_ratio,
                                  self.distill_batch_size, seed),
            distill_samples=self.distill_samples,
            predictor=TrainConfig(self.predictor_epochs, self.predictor_lr, self.predictor_warmup_ratio,
                                  self.predictor_batch_size, seed),
            iteration=IterationConfig(self.rounds, self.k, self.analyst_lr, self.kto_batch_size,
                                      self.kto_passes, seed),
            min_history=self.min_history,
        )

    def backend(self, role: str) -> BackendConfig:
        temperature = self.analyst_temperature if role == "analyst" else self.predictor_temperature
        return BackendConfig(base_url=self.llm_base_url, model=self.llm_model, api_key_env=self.llm_api_key_env,
                             temperature=temperature, top_p=self.llm_top_p,
                             max_in_flight=self.llm_max_in_flight, max_attempts=self.llm_max_attempts)


def describe_keys() -> str:
    defaults = RunConfig().to_dict()
    width = max(map(len, KEY_DOCS))
    return "\n".join(f"{k:<{width}}  {json.dumps(defaults[k])}  {doc}" for k, doc in KEY_DOCS.items())
