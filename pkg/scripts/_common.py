"""Shared setup for the experiment scripts: config from file plus overrides, banks in memory."""

import argparse
import json
import logging
from pathlib import Path

from profilekt.config import RunConfig
from profilekt.data import assign_difficulty, build_sequences, preprocess, segment_and_filter, split_dataset
from profilekt.pipeline import Banks
from profilekt.synth import generate_cohort


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, help="JSON run config (same keys as the CLI)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out", type=Path, help="write results as JSON here")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> RunConfig:
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for item in args.set:
        key, _, value = item.partition("=")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            overrides[key] = value
    return RunConfig.load(args.config, overrides)


def build_banks(cfg: RunConfig) -> Banks:
    """Banks from ``raw_csv`` when set, otherwise from a freshly generated synthetic cohort."""
    if cfg.raw_csv:
        with open(cfg.raw_csv, encoding="utf-8", newline="") as fh:
            split, _ = preprocess(fh, cfg.seed)
    else:
        cohort = generate_cohort(cfg.synth_students, cfg.cohort(), cfg.seed)
        windows = segment_and_filter(build_sequences(r for t in cohort for r in t.sequence.records))
        split = assign_difficulty(split_dataset(windows, cfg.seed))
    return Banks.from_split(split, cfg.min_history)


def dump(path: Path | None, payload: dict) -> None:
    if path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
