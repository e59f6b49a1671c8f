"""2-D line-matching run with the decided defaults.

Writes the usual run directory (metrics.csv, eval.csv, points.csv, summary.json)
and prints the FID ratio and the spread along the line.

    python3 scripts/run_toy2d.py --out runs/toy2d --seeds 0 1 2
    python3 scripts/run_toy2d.py --mode pathwise --noise 0
"""
import argparse
import json
from pathlib import Path

from distlab.cli import main as distlab


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs/toy2d")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--mode", choices=["grpo", "pathwise"], default="grpo")
    ap.add_argument("--noise", type=float, default=None, help="line noise of the reference set")
    ap.add_argument("--iterations", type=int, default=None)
    return ap.parse_args()


def run():
    args = parse_args()
    for seed in args.seeds:
        out = Path(args.out) / f"{args.mode}-seed{seed}"
        argv = ["toy2d", "--seed", str(seed), "--out", str(out), "--toy2d.mode", args.mode]
        if args.noise is not None:
            argv += ["--toy2d.line_noise", str(args.noise)]
        if args.iterations is not None:
            argv += ["--iterations", str(args.iterations)]
        if distlab(argv) != 0:
            raise SystemExit(f"run failed for seed {seed}")
        s = json.loads((out / "summary.json").read_text())
        print(f"seed {seed}: fid {s['fid_initial']:.4f} -> {s['fid_final']:.2e} "
              f"(ratio {s['fid_ratio']:.4f}); along-line std {s['along_line_std']:.3f} "
              f"vs reference {s['reference_along_line_std']:.3f}")


if __name__ == "__main__":
    run()
