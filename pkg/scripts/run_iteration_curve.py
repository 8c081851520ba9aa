"""Validation accuracy after each iteration round, per seed and averaged.

    python3 scripts/run_iteration_curve.py --set rounds=5 --out reports/iteration_curve.json
"""

import time

import numpy as np
from _common import build_banks, dump, load_config, parser

from profilekt.iteration import run_iterations
from profilekt.pipeline import distill_stage, train_stage


def main() -> None:
    args = parser(__doc__.splitlines()[0]).parse_args()
    cfg = load_config(args)
    start = time.perf_counter()
    banks = build_banks(cfg)
    curves, rewards = [], []
    for seed in cfg.eval_seeds:
        stages = cfg.stages(seed)
        policy, _ = distill_stage(banks.train, stages)
        predictor = train_stage(policy, banks.train, stages.predictor)
        _, _, trace = run_iterations(policy, predictor, banks.train, banks.validation,
                                     stages.iteration, stages.predictor)
        curves.append(trace.val_acc_curve())
        rewards.append([r.mean_reward for r in trace.rounds])
        print(f"seed {seed}: " + " ".join(f"{a:.4f}" for a in curves[-1]))
    mean = np.mean(curves, axis=0)
    print("mean:   " + " ".join(f"{a:.4f}" for a in mean))
    print("round:  " + " ".join(f"{r:>6d}" for r in range(len(mean))))
    print(f"{time.perf_counter() - start:.0f}s")
    dump(args.out, {"config": cfg.to_dict(), "seeds": cfg.eval_seeds, "val_acc": curves,
                    "mean_val_acc": mean.tolist(), "mean_reward": rewards})


if __name__ == "__main__":
    main()
