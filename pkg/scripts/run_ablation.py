"""Test-set ablation table: full method, no iteration, profile zeroed at inference, no profile.

A teacher-profile row shows the ceiling the rule-based annotator reaches with the same Predictor.

    python3 scripts/run_ablation.py --set eval_seeds=[1,2,3,4,5] --out reports/ablation.json
"""

import time

import numpy as np
from _common import build_banks, dump, load_config, parser

from profilekt.evaluation import format_table, mean_report
from profilekt.pipeline import ablation_runs, evaluate_bank, train_stage


def main() -> None:
    args = parser(__doc__.splitlines()[0]).parse_args()
    cfg = load_config(args)
    start = time.perf_counter()
    banks = build_banks(cfg)
    print(f"instances: train {len(banks.train)}  validation {len(banks.validation)}  test {len(banks.test)}")
    runs, results = ablation_runs(banks, cfg.stages(), cfg.eval_seeds)
    teacher = []
    for seed in cfg.eval_seeds:
        model = train_stage(None, banks.train, cfg.stages(seed).predictor, labels=banks.train.teacher_labels())
        teacher.append(evaluate_bank(None, model, banks.test, labels=banks.test.teacher_labels()))
    runs["Teacher profiles"] = teacher
    n = len(cfg.eval_seeds)
    rows = {f"{name} ({n}-run mean)": mean_report(reps) for name, reps in runs.items()}
    print(format_table({m: {cfg.dataset_name: r} for m, r in rows.items()}), end="")
    spread = np.std([r.acc for r in runs["Full"]])
    print(f"Full ACC std over seeds {spread:.4f}; best rounds {[r.best_round for r in results]}; "
          f"{time.perf_counter() - start:.0f}s")
    dump(args.out, {"config": cfg.to_dict(), "rows": {m: r.to_dict() for m, r in rows.items()},
                    "per_seed": {name: [r.to_dict() for r in reps] for name, reps in runs.items()}})


if __name__ == "__main__":
    main()
