"""Versioned JSON artifacts: policies, predictors and per-window profile files."""

from __future__ import annotations

import json
from itertools import groupby
from pathlib import Path
from typing import Sequence

import numpy as np

from .analyst import (
    MASTERY_LABELS,
    OUTLOOK_LABELS,
    TREND_LABELS,
    AnalystPolicy,
    SlotLabels,
    StructuredProfile,
)
from .instances import InstanceBank
from .predictor import PredictorModel
from .profile_text import render_profile
from .workspace import write_text

POLICY_SCHEMA = "profilekt.analyst-policy/v1"
PROFILES_SCHEMA = "profilekt.profiles/v1"


def save_policy(policy: AnalystPolicy, path: Path) -> Path:
    return write_text(path, json.dumps({"schema": POLICY_SCHEMA, **policy.to_dict()}, sort_keys=True) + "\n")


def load_policy(path: Path) -> AnalystPolicy:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("schema") != POLICY_SCHEMA:
        raise ValueError(f"{path}: expected schema {POLICY_SCHEMA!r}, got {d.get('schema')!r}")
    return AnalystPolicy.from_dict(d)


def save_predictor(model: PredictorModel, path: Path) -> Path:
    return write_text(path, model.to_json() + "\n")


def load_predictor(path: Path) -> PredictorModel:
    return PredictorModel.from_json(Path(path).read_text(encoding="utf-8"))


def labels_from_profile(stats_kcs: Sequence[str], profile: StructuredProfile) -> tuple[list[int], list[int], int]:
    """Slot indices in the order of ``stats_kcs``; KCs the profile skipped get the parser defaults."""
    mastery, trend = [], []
    for kc in stats_kcs:
        a = profile.assessment(kc)
        mastery.append(MASTERY_LABELS.index(a.mastery if a else "Developing"))
        trend.append(TREND_LABELS.index(a.trend if a else "Flat"))
    return mastery, trend, OUTLOOK_LABELS.index(profile.outlook)


def _instance_slices(bank: InstanceBank) -> list[slice]:
    starts = np.searchsorted(bank.slots.kc_owner, np.arange(len(bank) + 1))
    return [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]


def write_profiles(path: Path, bank: InstanceBank, labels: SlotLabels, source: str, positions: str,
                   final_profiles: dict[int, StructuredProfile] | None = None) -> Path:
    """One header line, then one line per window holding label indices for every instance
    and the rendered profile of the window's last instance."""
    slices = _instance_slices(bank)
    lines = [json.dumps({"schema": PROFILES_SCHEMA, "source": source, "positions": positions,
                         "labels": {"mastery": MASTERY_LABELS, "trend": TREND_LABELS,
                                    "outlook": OUTLOOK_LABELS}}, sort_keys=True)]
    for window_id, group in groupby(range(len(bank)), key=lambda i: bank.window_ids[i]):
        idx = list(group)
        last = idx[-1]
        final = (final_profiles or {}).get(last) or bank.profile(last, labels)
        if final.text is None:
            final.text = render_profile(final)
        lines.append(json.dumps({
            "window_id": window_id,
            "positions": [int(bank.history_len[i]) for i in idx],
            "mastery": [labels.mastery[slices[i]].tolist() for i in idx],
            "trend": [labels.trend[slices[i]].tolist() for i in idx],
            "outlook": [int(labels.outlook[i]) for i in idx],
            "final": final.to_dict(),
        }, sort_keys=True))
    return write_text(path, "\n".join(lines) + "\n")


def read_profiles(path: Path) -> tuple[dict, list[dict]]:
    with Path(path).open(encoding="utf-8") as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows or rows[0].get("schema") != PROFILES_SCHEMA:
        raise ValueError(f"{path}: not a {PROFILES_SCHEMA} file")
    return rows[0], rows[1:]


def labels_for_bank(rows: list[dict], bank: InstanceBank) -> SlotLabels:
    """Reassemble slot labels in bank order, checking that the file describes the same instances."""
    keys = [(r["window_id"], p) for r in rows for p in r["positions"]]
    expected = list(zip(bank.window_ids, (int(h) for h in bank.history_len)))
    if keys != expected:
        raise ValueError("profile file does not match the split's instances; re-run `profilekt profile`")
    mastery = [m for r in rows for per in r["mastery"] for m in per]
    trend = [t for r in rows for per in r["trend"] for t in per]
    outlook = [o for r in rows for o in r["outlook"]]
    if len(mastery) != len(bank.slots.kc_owner):
        raise ValueError("profile file has the wrong number of KC slots; re-run `profilekt profile`")
    return SlotLabels(np.array(mastery, dtype=np.int64), np.array(trend, dtype=np.int64),
                      np.array(outlook, dtype=np.int64))


def final_profiles(rows: list[dict]) -> dict[str, StructuredProfile]:
    return {r["window_id"]: StructuredProfile.from_dict(r["final"]) for r in rows}
