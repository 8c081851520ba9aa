"""``profilekt`` command line: one subcommand per pipeline stage, all state kept in a workspace."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .analyst import MASTERY_LABELS, OUTLOOK_LABELS, TREND_LABELS, SlotLabels, profile_from_labels
from .artifacts import (
    final_profiles,
    labels_for_bank,
    labels_from_profile,
    load_policy,
    load_predictor,
    read_profiles,
    save_policy,
    save_predictor,
    write_profiles,
)
from .config import RunConfig, describe_keys
from .data import DatasetSplit, preprocess, read_split, write_split
from .evaluation import EvalReport, five_run_mean, format_table, instances_from_arrays, mean_report, report, N_RUNS
from .instances import InstanceBank, build_bank
from .iteration import run_iterations
from .llm import ChatClient, llm_generate_profile, llm_predict
from .llm.prompts import format_history, format_next
from .pipeline import Banks, ablation_runs, distill_stage, evaluate_bank
from .predictor import predict_proba, train, PredictorModel
from .profile_text import ProfileParseError, render_profile
from .synth import cohort_config_dict, generate_cohort, write_cohort
from .workspace import MissingArtifact, Workspace, WorkspaceLocked, write_text

log = logging.getLogger("profilekt")

SPLITS = ("train", "validation", "test")


class Paths:
    def __init__(self, ws: Workspace):
        self.cohort_csv = ws.raw / "cohort.csv"
        self.cohort_latent = ws.raw / "cohort_latent.jsonl"
        self.cohort_config = ws.raw / "cohort_config.json"
        self.split_meta = ws.splits / "meta.json"
        self.split_files = [ws.splits / f"{s}.jsonl" for s in SPLITS] + [self.split_meta]
        self.distilled = ws.models / "analyst_distilled.json"
        self.predictor = ws.models / "predictor.json"
        self.iter_policy = ws.models / "analyst_iterated.json"
        self.iter_predictor = ws.models / "predictor_iterated.json"
        self.profiles = {s: ws.profiles / f"{s}.jsonl" for s in SPLITS}
        self.distill_trace = ws.traces / "distill_loss.jsonl"
        self.predictor_trace = ws.traces / "predictor_loss.jsonl"
        self.iter_trace = ws.traces / "iteration.jsonl"
        self.iter_summary = ws.traces / "iteration_summary.json"
        self.eval_json = ws.reports / "eval.json"
        self.eval_table = ws.reports / "eval_table.txt"
        self.eval_curves = ws.traces / "eval_iteration_curves.jsonl"
        self.case_txt = ws.reports / "case_study.txt"
        self.case_json = ws.reports / "case_study.json"


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)


def _load_split(ws: Workspace, p: Paths) -> DatasetSplit:
    ws.require(p.split_meta, "preprocess")
    return read_split(ws.splits)


def _banks(cfg: RunConfig, split: DatasetSplit) -> Banks:
    return Banks.from_split(split, cfg.min_history)


def _histories(split: DatasetSplit, name: str, bank: InstanceBank) -> list:
    windows = {w.window_id: w for w in getattr(split, name)}
    return [windows[w].records[:int(h)] for w, h in zip(bank.window_ids, bank.history_len)]


# --- commands: each returns (inputs, outputs, stats) --------------------------------------

def cmd_synth(cfg: RunConfig, ws: Workspace, p: Paths):
    traces = generate_cohort(cfg.synth_students, cfg.cohort(), cfg.seed)
    ws.raw.mkdir(parents=True, exist_ok=True)
    with p.cohort_csv.open("w", encoding="utf-8", newline="") as csv_out, \
            p.cohort_latent.open("w", encoding="utf-8", newline="\n") as latent_out:
        write_cohort(traces, csv_out, latent_out)
    write_text(p.cohort_config, json.dumps({"seed": cfg.seed, "students": cfg.synth_students,
                                            **cohort_config_dict(cfg.cohort())}, sort_keys=True, indent=1) + "\n")
    n = sum(len(t.sequence.records) for t in traces)
    return [], [p.cohort_csv, p.cohort_latent, p.cohort_config], {"students": len(traces), "interactions": n}


def cmd_preprocess(cfg: RunConfig, ws: Workspace, p: Paths):
    raw = Path(cfg.raw_csv) if cfg.raw_csv else p.cohort_csv
    if not raw.exists():
        hint = "fix raw_csv" if cfg.raw_csv else "run `profilekt synth` first or set raw_csv"
        raise MissingArtifact(f"raw interaction file {raw} not found; {hint}")
    with raw.open(encoding="utf-8", newline="") as fh:
        split, dropped = preprocess(fh, cfg.seed)
    write_split(split, ws.splits)
    stats = {"dropped_rows": dropped, **{f"{k}_windows": len(v) for k, v in split.parts().items()}}
    return [raw], p.split_files, stats


def cmd_distill(cfg: RunConfig, ws: Workspace, p: Paths):
    split = _load_split(ws, p)
    bank = build_bank(split.train, cfg.min_history)
    policy, losses = distill_stage(bank, cfg.stages())
    save_policy(policy, p.distilled)
    write_text(p.distill_trace, _jsonl({"epoch": e + 1, "loss": l} for e, l in enumerate(losses)))
    return p.split_files, [p.distilled, p.distill_trace], {"train_instances": len(bank)}


def _llm_profiles(cfg: RunConfig, bank: InstanceBank, histories: list):
    """Profiles from the LLM Analyst for every instance of ``bank`` plus their slot labels."""
    def one(i):
        try:
            return llm_generate_profile(client, histories[i], bank.next_q[i])
        except ProfileParseError as exc:
            log.warning("%s: unparseable profile (%s); using default labels", bank.window_ids[i], exc)
            n = len(bank.stats[i])
            prof = profile_from_labels(bank.stats[i], bank.next_q[i], [MASTERY_LABELS.index("Developing")] * n,
                                       [TREND_LABELS.index("Flat")] * n, OUTLOOK_LABELS.index("Stretch"))
            prof.text, prof.warnings = exc.raw_text, [f"unparseable: {exc}"]
            return prof

    with ChatClient(cfg.backend("analyst")) as client:
        with ThreadPoolExecutor(max_workers=cfg.llm_max_in_flight) as pool:
            profiles = list(pool.map(one, range(len(bank))))
    mastery, trend, outlook = [], [], []
    for i, prof in enumerate(profiles):
        m, t, o = labels_from_profile([s.kc_id for s in bank.stats[i]], prof)
        mastery += m
        trend += t
        outlook.append(o)
    labels = SlotLabels(np.array(mastery, dtype=np.int64), np.array(trend, dtype=np.int64),
                        np.array(outlook, dtype=np.int64))
    return labels, dict(enumerate(profiles))


def cmd_profile(cfg: RunConfig, ws: Workspace, p: Paths):
    split = _load_split(ws, p)
    policy = load_policy(ws.require(p.distilled, "distill"))
    llm = cfg.analyst_backend == "llm"
    stats = {}
    for name in SPLITS:
        # the LLM Analyst profiles final positions only; one request per training prefix is impractical
        final_only = name != "train" or llm
        bank = build_bank(getattr(split, name), cfg.min_history, final_only=final_only)
        if llm:
            labels, finals = _llm_profiles(cfg, bank, _histories(split, name, bank))
        else:
            labels, finals = bank.labels(policy, greedy=True), None
        write_profiles(p.profiles[name], bank, labels, cfg.analyst_backend,
                       "final" if final_only else "all", finals)
        stats[f"{name}_instances"] = len(bank)
    return p.split_files + [p.distilled], list(p.profiles.values()), stats


def _profiled_bank(cfg: RunConfig, ws: Workspace, p: Paths, split: DatasetSplit, name: str):
    header, rows = read_profiles(ws.require(p.profiles[name], "profile"))
    bank = build_bank(getattr(split, name), cfg.min_history, final_only=header["positions"] == "final")
    return bank, labels_for_bank(rows, bank), rows


def cmd_train_predictor(cfg: RunConfig, ws: Workspace, p: Paths):
    split = _load_split(ws, p)
    bank, labels, _ = _profiled_bank(cfg, ws, p, split, "train")
    model, losses = train(PredictorModel.zeros(), bank.features(labels), bank.y, cfg.stages().predictor)
    save_predictor(model, p.predictor)
    write_text(p.predictor_trace, _jsonl({"epoch": e + 1, "loss": l} for e, l in enumerate(losses)))
    return p.split_files + [p.profiles["train"]], [p.predictor, p.predictor_trace], {"train_instances": len(bank)}


def cmd_iterate(cfg: RunConfig, ws: Workspace, p: Paths):
    policy = load_policy(ws.require(p.distilled, "distill"))
    predictor = load_predictor(ws.require(p.predictor, "train-predictor"))
    split = _load_split(ws, p)
    banks = _banks(cfg, split)
    stages = cfg.stages()
    best: dict = {}

    def keep_best(r, pol, pred, acc):
        if not best or acc > best["acc"]:
            best.update(round=r, policy=pol, predictor=pred, acc=acc)

    _, _, trace = run_iterations(policy, predictor, banks.train, banks.validation, stages.iteration,
                                 stages.predictor, on_round=keep_best)
    save_policy(best["policy"], p.iter_policy)
    save_predictor(best["predictor"], p.iter_predictor)
    write_text(p.iter_trace, trace.to_jsonl())
    summary = {"rounds": cfg.rounds, "best_round": best["round"], "val_acc_curve": trace.val_acc_curve(),
               "initial_val_f1": trace.initial_val_f1}
    write_text(p.iter_summary, json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return ([p.distilled, p.predictor] + p.split_files,
            [p.iter_policy, p.iter_predictor, p.iter_trace, p.iter_summary], {"best_round": best["round"]})


def _aggregate(reports: list[EvalReport]) -> EvalReport:
    return five_run_mean(reports) if len(reports) == N_RUNS else mean_report(reports)


def _llm_predictor_report(cfg: RunConfig, ws: Workspace, p: Paths, split: DatasetSplit) -> EvalReport:
    bank, _, rows = _profiled_bank(cfg, ws, p, split, "test")
    finals = final_profiles(rows)
    histories = _histories(split, "test", bank)
    last = {w: i for i, w in enumerate(bank.window_ids)}
    idx = sorted(last.values())
    with ChatClient(cfg.backend("predictor")) as client:
        with ThreadPoolExecutor(max_workers=cfg.llm_max_in_flight) as pool:
            outcomes = list(pool.map(lambda i: llm_predict(client, histories[i], finals[bank.window_ids[i]].text,
                                                           bank.next_q[i]), idx))
    return report(instances_from_arrays([bank.window_ids[i] for i in idx], bank.history_len[idx],
                                        [o.label for o in outcomes], bank.y[idx] > 0.5))


def cmd_evaluate(cfg: RunConfig, ws: Workspace, p: Paths):
    policy = load_policy(ws.require(p.distilled, "distill"))
    predictor = load_predictor(ws.require(p.predictor, "train-predictor"))
    split = _load_split(ws, p)
    banks = _banks(cfg, split)
    inputs = [p.distilled, p.predictor] + p.split_files
    rows: dict[str, EvalReport] = {"Workspace: before iteration": evaluate_bank(policy, predictor, banks.test)}
    if p.iter_policy.exists() and p.iter_predictor.exists():
        rows["Workspace: after iteration"] = evaluate_bank(load_policy(p.iter_policy),
                                                           load_predictor(p.iter_predictor), banks.test)
        inputs += [p.iter_policy, p.iter_predictor]
    runs, results = ablation_runs(banks, cfg.stages(), cfg.eval_seeds)
    curves = [{"seed": seed, "best_round": res.best_round, "val_acc": res.trace.val_acc_curve()}
              for seed, res in zip(cfg.eval_seeds, results)]
    for name, reps in runs.items():
        rows[f"{name} ({len(reps)}-run mean)"] = _aggregate(reps)
    if cfg.predictor_backend == "llm":
        rows["LLM Predictor (workspace profiles)"] = _llm_predictor_report(cfg, ws, p, split)
        inputs.append(p.profiles["test"])
    ds = cfg.dataset_name
    write_text(p.eval_json, json.dumps({ds: {m: r.to_dict() for m, r in rows.items()}}, sort_keys=True, indent=1)
               + "\n")
    table = format_table({m: {ds: r} for m, r in rows.items()})
    write_text(p.eval_table, table)
    write_text(p.eval_curves, _jsonl(curves))
    print(table, end="")
    return inputs, [p.eval_json, p.eval_table, p.eval_curves], {"seeds": list(cfg.eval_seeds)}


def _pick_case(cfg: RunConfig, bank: InstanceBank, wrong_before: np.ndarray, right_after: np.ndarray) -> int:
    if cfg.case_window:
        if cfg.case_window not in bank.window_ids:
            raise ValueError(f"case_window {cfg.case_window!r} is not a test window")
        return bank.window_ids.index(cfg.case_window)
    flipped = np.flatnonzero(wrong_before & right_after)
    return int(flipped[0]) if len(flipped) else 0


def cmd_case_study(cfg: RunConfig, ws: Workspace, p: Paths):
    before = load_policy(ws.require(p.distilled, "distill"))
    pred_before = load_predictor(ws.require(p.predictor, "train-predictor"))
    after = load_policy(ws.require(p.iter_policy, "iterate"))
    pred_after = load_predictor(ws.require(p.iter_predictor, "iterate"))
    split = _load_split(ws, p)
    bank = build_bank(split.test, final_only=True)
    lab_b, lab_a = bank.labels(before), bank.labels(after)
    prob_b = predict_proba(pred_before, bank.features(lab_b))
    prob_a = predict_proba(pred_after, bank.features(lab_a))
    truth = bank.y > 0.5
    i = _pick_case(cfg, bank, (prob_b >= 0.5) != truth, (prob_a >= 0.5) == truth)
    history = _histories(split, "test", bank)[i]
    out = [f"Case study: test window {bank.window_ids[i]}",
           f"History ({len(history)} interactions, oldest first):", f"  {format_history(history)}",
           f"Next question: {format_next(bank.next_q[i])}",
           f"Actual outcome: {'correct' if truth[i] else 'incorrect'}", ""]
    record = {"window_id": bank.window_ids[i], "truth": bool(truth[i])}
    for title, labels, prob, key in (("Profile Before Iteration", lab_b, prob_b, "before"),
                                     ("Profile After Iteration", lab_a, prob_a, "after")):
        profile = bank.profile(i, labels)
        text = render_profile(profile)
        verdict = "right" if (prob[i] >= 0.5) == truth[i] else "wrong"
        out += [f"=== {title} ===", text.rstrip(), "",
                f"Predictor: P(correct) = {prob[i]:.3f} -> {'True' if prob[i] >= 0.5 else 'False'} ({verdict})", ""]
        record[key] = {"profile": profile.to_dict(), "probability": float(prob[i]), "text": text}
    text = "\n".join(out)
    write_text(p.case_txt, text)
    write_text(p.case_json, json.dumps(record, sort_keys=True, indent=1) + "\n")
    print(text, end="")
    return ([p.distilled, p.predictor, p.iter_policy, p.iter_predictor] + p.split_files,
            [p.case_txt, p.case_json], {"window_id": bank.window_ids[i]})


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "distill": cmd_distill,
    "profile": cmd_profile,
    "train-predictor": cmd_train_predictor,
    "iterate": cmd_iterate,
    "evaluate": cmd_evaluate,
    "case-study": cmd_case_study,
}
PIPELINE = ("preprocess", "distill", "profile", "train-predictor", "iterate", "evaluate", "case-study")


def run_command(name: str, cfg: RunConfig) -> Path:
    """Run one command under the workspace lock and write its manifest."""
    ws = Workspace(cfg.workspace)
    ws.init()
    with ws.lock(name):
        inputs, outputs, stats = COMMANDS[name](cfg, ws, Paths(ws))
        return ws.write_manifest(name, cfg, inputs, outputs, stats)


def run_pipeline(cfg: RunConfig) -> list[Path]:
    names = PIPELINE if cfg.raw_csv else ("synth",) + PIPELINE
    return [run_command(n, cfg) for n in names]


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--workspace", default=argparse.SUPPRESS, help="workspace directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--set", action="append", default=argparse.SUPPRESS, metavar="KEY=VALUE",
                        help="override a config key (value parsed as JSON when possible)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="profilekt", parents=[common],
                                     description="Profile-based knowledge tracing pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "preprocess":
            sp.add_argument("--raw", dest="raw_csv", default=argparse.SUPPRESS, help="interaction CSV")
        elif name == "iterate":
            sp.add_argument("--rounds", type=int, default=argparse.SUPPRESS)
        elif name == "case-study":
            sp.add_argument("--window", dest="case_window", default=argparse.SUPPRESS)
    sub.add_parser("pipeline", parents=[common], help="synth (unless raw_csv is set) through case-study")
    sub.add_parser("keys", parents=[common], help="list config keys with defaults")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args["command"]
    if command == "keys":
        print(describe_keys())
        return 0
    try:
        overrides = _parse_set(args.get("set", []))
        for key in ("workspace", "seed", "raw_csv", "rounds", "case_window"):
            if key in args:
                overrides[key] = args[key]
        cfg = RunConfig.load(args.get("config"), overrides)
        if command == "pipeline":
            run_pipeline(cfg)
        else:
            run_command(command, cfg)
    except (MissingArtifact, WorkspaceLocked, ValueError, OSError, RuntimeError) as exc:
        if args.get("verbose"):
            log.exception("command failed")
        print(f"profilekt {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
