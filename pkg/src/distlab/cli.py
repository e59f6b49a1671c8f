"""``distlab`` command line.

    distlab toy2d [CONFIG] [--out DIR] [--iterations N] [--seed S] [--key.path VALUE ...]
    distlab ar    [CONFIG] [--cfg-scale S] ...
    distlab mle   [CONFIG] ...
    distlab eval  --checkpoint PATH [CONFIG] [--samples N] [--eval-seed S]
    distlab check [--inject-fault SUITE] [--report json] [--quick]

Exit codes: 0 success, 1 configuration error, 2 numerical abort, 3 check failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .io import atomic_write_json, atomic_write_text
from .numkit import Rng
from .trainer import (ConfigError, CsvLog, ExperimentConfig, NumericalAbort, apply_overrides,
                      env_defaults, evaluate, load_config, load_policy, make_env,
                      parse_override_value, save_policy, train, train_mle)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

EVAL_FIELDS = ["iter", "fid", "reward_mean", "reward_align", "reward_pref", "entropy_mean",
               "entropy_frac"]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distlab", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("toy2d", "2-D line-matching run (distribution reward only)"),
                           ("ar", "GRPO fine-tuning of the toy AR policy"),
                           ("mle", "teacher-forced MLE baseline from the same checkpoint")):
        p = sub.add_parser(name, help=helptext)
        _run_args(p)
    p = sub.add_parser("eval", help="evaluate a policy checkpoint")
    _run_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--eval-seed", type=int, default=None)
    p = sub.add_parser("check", help="run the oracle and gradient suites")
    p.add_argument("--inject-fault", choices=checks.SUITES, default=None)
    p.add_argument("--report", choices=["table", "json"], default="table")
    p.add_argument("--quick", action="store_true", help="20 cases per suite instead of 100")
    return ap


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", default=None, help="JSON config file")
    p.add_argument("--config", dest="config_flag", default=None)
    p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cfg-scale", type=float, default=None)


def split_overrides(extra: list[str]) -> dict:
    """``--a.b 3 --c x`` -> {"a.b": 3, "c": "x"}; ``--a.b=3`` also accepted."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for --{key}")
            value = extra[i + 1]
            i += 2
        out[key] = parse_override_value(value)
    return out


def resolve_config(args, extra: list[str], env: str) -> ExperimentConfig:
    overrides = split_overrides(extra)
    for flag, key in (("iterations", "iterations"), ("seed", "seed"), ("cfg_scale", "sampler.cfg_scale"),
                      ("out", "output.dir")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    path = args.config_flag or args.config
    if path is not None:
        return load_config(path, overrides, env)
    base = env_defaults(env).to_dict()
    if "seed" not in overrides and os.environ.get("DISTLAB_SEED"):
        overrides["seed"] = int(os.environ["DISTLAB_SEED"])
    doc = apply_overrides(base, overrides)
    doc["env"] = env
    return ExperimentConfig.from_dict(doc)


def _eval_doc(it, ev) -> dict:
    return {"iter": it, "fid": ev.fid, "reward_mean": ev.reward_mean,
            "reward_align": ev.reward_align, "reward_pref": ev.reward_pref,
            "entropy_mean": ev.entropy_mean, "entropy_frac": ev.entropy_frac}


def _rows_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in fields])
    return buf.getvalue()


def along_line_std(points: np.ndarray) -> float:
    return float(np.std(points @ np.array([1.0, 1.0]) / np.sqrt(2.0)))


class RunWriter:
    """Owns the output directory of one run; every file goes through temp + rename."""

    def __init__(self, out: Path, cfg: ExperimentConfig, kind: str):
        self.out = out
        self.cfg = cfg
        self.kind = kind
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        atomic_write_text(out / "config.json", cfg.to_json() + "\n")
        self.metrics = CsvLog(out / "metrics.csv")
        self.evals: list[dict] = []
        self.points: list[tuple] = []

    def on_iteration(self, state, rec) -> None:
        self.metrics.append(rec)
        every = self.cfg.output.checkpoint_every
        if every and state.iteration % every == 0:
            save_policy(self.out / "checkpoints" / f"iter_{state.iteration:06d}.json", state.policy,
                        {"iteration": state.iteration, "kind": self.kind})

    def on_eval(self, it, ev, state) -> None:
        self.evals.append(_eval_doc(it, ev))
        atomic_write_text(self.out / "eval.csv", _rows_csv(self.evals, EVAL_FIELDS))
        if self.cfg.env == "toy2d" and self.cfg.toy2d.dump_points:
            ro = state.env.rollout(state.policy, Rng(self.cfg.eval_seed).spawn(7),
                                   self.cfg.toy2d.dump_points)
            self.points.extend((it, float(x), float(y)) for x, y in ro.points)
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["iteration", "x", "y"])
            w.writerows((i, repr(x), repr(y)) for i, x, y in self.points)
            atomic_write_text(self.out / "points.csv", buf.getvalue())

    def finish(self, policy, summary: dict) -> None:
        self.metrics.flush()
        save_policy(self.out / "policy.json", policy, {"kind": self.kind})
        atomic_write_json(self.out / "summary.json", summary)


def _summary(cfg: ExperimentConfig, result, kind: str, status: str = "ok") -> dict:
    evals = [_eval_doc(it, ev) for it, ev in result.evals]
    doc = {"status": status, "kind": kind, "env": cfg.env, "seed": cfg.seed,
           "iterations": len(result.records), "evals": evals}
    if evals:
        first, last = evals[0], evals[-1]
        doc.update(fid_initial=first["fid"], fid_final=last["fid"],
                   fid_ratio=last["fid"] / first["fid"] if first["fid"] > 0 else None,
                   final=last)
    if cfg.env == "ar" and "entropy_target" in result.extra:
        doc["entropy_target"] = result.extra["entropy_target"]
    if cfg.env == "toy2d" and result.state is not None:
        env = result.state.env
        pts = env.rollout(result.policy, Rng(cfg.eval_seed), cfg.toy2d.eval_samples).points
        doc["along_line_std"] = along_line_std(pts)
        doc["reference_along_line_std"] = along_line_std(env.reference_points)
    return doc


def cmd_run(args, extra, kind: str) -> int:
    env = "toy2d" if kind == "toy2d" else "ar"
    try:
        cfg = resolve_config(args, extra, env)
    except ConfigError as exc:
        print(f"distlab {kind}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output.dir or f"runs/{kind}-seed{cfg.seed}")
    writer = RunWriter(out, cfg, kind)
    runner = train_mle if kind == "mle" else train
    try:
        result = runner(cfg, on_iteration=writer.on_iteration, on_eval=writer.on_eval)
    except FileNotFoundError as exc:
        print(f"distlab {kind}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        for rec in exc.records[len(writer.metrics.rows):]:
            writer.metrics.append(rec)
        writer.metrics.flush()
        if exc.state is not None:
            save_policy(out / "checkpoints" / "abort.json", exc.state.policy,
                        {"iteration": exc.state.iteration, "kind": kind})
        atomic_write_json(out / "summary.json",
                          {"status": "aborted", "kind": kind, "error": str(exc),
                           "diagnostics": exc.diagnostics, "iterations": len(exc.records)})
        print(f"distlab {kind}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = _summary(cfg, result, kind)
    writer.finish(result.policy, summary)
    line = f"{kind}: {len(result.records)} iterations, eval FID {summary['fid_initial']:.5g} -> " \
           f"{summary['fid_final']:.5g}; outputs in {out}"
    print(line)
    return EXIT_OK


def cmd_eval(args, extra) -> int:
    try:
        policy = load_policy(args.checkpoint)
        env_name = "toy2d" if type(policy).__name__ == "Gaussian2dPolicy" else "ar"
        cfg = resolve_config(args, extra, env_name)
    except (ConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"distlab eval: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    env = make_env(cfg)
    n = args.samples or (cfg.toy2d.eval_samples if env_name == "toy2d" else cfg.ar.eval_samples)
    seed = cfg.eval_seed if args.eval_seed is None else args.eval_seed
    ev = evaluate(env, policy, n, seed, eps_var=cfg.eps_var)
    doc = {"checkpoint": str(args.checkpoint), "samples": n, "seed": seed, **_eval_doc(None, ev)}
    doc.pop("iter")
    print(json.dumps(doc, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_checks(fault=args.inject_fault, quick=args.quick)
    ok = all(r.passed for r in results)
    if args.report == "json":
        print(json.dumps({"passed": ok, "suites": [r.to_dict() for r in results]}, indent=1))
    else:
        print(checks.format_table(results))
        failed = [r.name for r in results if not r.passed]
        print("all suites passed" if ok else f"FAILED: {', '.join(failed)}")
    return EXIT_OK if ok else EXIT_CHECK


def extract_overrides(argv: list[str], known: set[str]) -> tuple[list[str], list[str]]:
    """Pull ``--key value`` pairs for unknown options out before argparse sees them,
    so an override value is never mistaken for the positional config path."""
    keep, extra, i = [], [], 0
    while i < len(argv):
        tok = argv[i]
        name = tok.split("=", 1)[0]
        if tok.startswith("--") and len(tok) > 2 and name not in known:
            extra.append(tok)
            if "=" not in tok and i + 1 < len(argv):
                extra.append(argv[i + 1])
                i += 1
        else:
            keep.append(tok)
        i += 1
    return keep, extra


def _known_options(ap: argparse.ArgumentParser) -> set[str]:
    out = set()
    for action in ap._actions:
        out.update(action.option_strings)
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                out |= _known_options(sub)
    return out


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    argv, extra = extract_overrides(argv, _known_options(ap))
    args, more = ap.parse_known_args(argv)
    extra = more + extra
    if args.command == "check":
        if extra:
            print(f"distlab check: unexpected arguments {extra}", file=sys.stderr)
            return EXIT_CONFIG
        return cmd_check(args)
    if args.command == "eval":
        return cmd_eval(args, extra)
    return cmd_run(args, extra, args.command)


if __name__ == "__main__":
    sys.exit(main())
