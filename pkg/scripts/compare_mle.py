"""GRPO versus teacher-forced MLE from the same pretrained toy checkpoint.

For each seed: one 600-iteration GRPO run with the AR defaults and one MLE
continuation of ``--mle-iterations`` steps at the same learning rate.  The
eval FID of both at every evaluation point goes to one CSV.

    python3 scripts/compare_mle.py --seeds 0 1 --out runs/mle_vs_grpo.csv
"""
import argparse
import csv
from pathlib import Path

from distlab.trainer import ar_defaults, train, train_mle


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--grpo-iterations", type=int, default=600)
    ap.add_argument("--mle-iterations", type=int, default=5000)
    ap.add_argument("--cfg-scale", type=float, default=None)
    ap.add_argument("--out", default="runs/mle_vs_grpo.csv")
    return ap.parse_args()


def run():
    args = parse_args()
    rows = []
    for seed in args.seeds:
        for method, n, runner in (("grpo", args.grpo_iterations, train),
                                  ("mle", args.mle_iterations, train_mle)):
            cfg = ar_defaults()
            cfg.seed, cfg.iterations = seed, n
            if args.cfg_scale is not None:
                cfg.sampler.cfg_scale = args.cfg_scale
            result = runner(cfg)
            rows += [(seed, method, it, ev.fid, ev.reward_mean, ev.entropy_frac)
                     for it, ev in result.evals]
            print(f"seed {seed} {method:>4} {n:>5} it: eval FID {result.fid_initial:.4f} -> "
                  f"{result.fid_final:.4f}")
        at = {(m, it): fid for s, m, it, fid, *_ in rows if s == seed}
        g = at[("grpo", args.grpo_iterations)]
        for it in sorted({it for m, it in at if m == "mle" and it in (500, 600, args.mle_iterations)}):
            print(f"  GRPO-{args.grpo_iterations} {g:.4f} vs MLE-{it} {at[('mle', it)]:.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "method", "iter", "eval_fid", "reward_mean", "entropy_frac"])
        w.writerows(rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    run()
