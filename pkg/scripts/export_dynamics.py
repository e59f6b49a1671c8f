"""Training-dynamics export for the toy AR GRPO run.

Writes per-iteration composite reward, EMA FID and mean token entropy,
each with a trailing window-50 mean, for plotting elsewhere.

    python3 scripts/export_dynamics.py --seed 0 --out runs/dynamics.csv
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from distlab.trainer import ar_defaults, train


def trailing_mean(x, w):
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - w, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--window", type=int, default=50)
    ap.add_argument("--no-entropy-control", action="store_true")
    ap.add_argument("--out", default="runs/dynamics.csv")
    return ap.parse_args()


def run():
    args = parse_args()
    cfg = ar_defaults()
    cfg.seed, cfg.iterations = args.seed, args.iterations
    cfg.entropy.enabled = not args.no_entropy_control
    result = train(cfg)
    recs = result.records
    cols = {k: np.array([getattr(r, k) for r in recs])
            for k in ("reward_mean", "ema_fid", "entropy_mean", "entropy_frac", "c_eff")}
    smooth = {k: trailing_mean(cols[k], args.window) for k in ("reward_mean", "ema_fid", "entropy_mean")}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "reward_mean", "reward_smooth", "ema_fid", "ema_fid_smooth",
                    "entropy_mean", "entropy_smooth", "entropy_frac", "c_eff"])
        for i, r in enumerate(recs):
            w.writerow([r.iter, repr(r.reward_mean), repr(smooth["reward_mean"][i]), repr(r.ema_fid),
                        repr(smooth["ema_fid"][i]), repr(r.entropy_mean),
                        repr(smooth["entropy_mean"][i]), repr(r.entropy_frac), repr(r.c_eff)])
    last = len(recs) - 1
    mark = min(args.window - 1, last)
    print(f"smoothed reward {smooth['reward_mean'][mark]:.4f} -> {smooth['reward_mean'][last]:.4f}; "
          f"smoothed EMA FID {smooth['ema_fid'][mark]:.4f} -> {smooth['ema_fid'][last]:.4f}; "
          f"entropy target {result.extra['entropy_target']:.3f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    run()
