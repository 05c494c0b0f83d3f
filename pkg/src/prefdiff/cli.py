"""Command-line entry point: gen | filter | train | diagnose | eval.

Exit codes: 0 success, 2 config error, 3 I/O or file-format error,
4 numeric failure. Worker count defaults to 1, which pins the bit-exact
reference outputs; all reductions are fixed-shape so results do not depend
on the cap.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, RunConfig, apply_overrides, build_committee,
                     build_profile, build_schedule, config_hash, load_config,
                     resolve)
from .datagen import (DatasetFormatError, conflict_stats, gen_dataset,
                      load_dataset, save_dataset)
from .dpo import variance_report
from .evalrep import compare_models, evaluate_model, prompt_grid
from .model import CheckpointFormatError, NumericError, load_checkpoint
from .rewards import consensus_partition
from .semitrain import make_intervals, run_pipeline, train_dpo_baseline


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return resolve(cfg)


def _meta(cfg: RunConfig, workers: int) -> dict:
    return {
        "tool_version": __version__,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "workers": workers,
    }


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = args.out or cfg.paths.dataset
    profile = build_profile(cfg)
    dataset = gen_dataset(profile)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out, seed=profile.seed,
                 extra={"tool_version": __version__, "config_hash": config_hash(cfg)})
    stats = conflict_stats(dataset, profile.committee)
    print(f"wrote {len(dataset)} pairs to {out}")
    for k, s in enumerate(stats):
        print(f"  dim {k}: p_a={s['p_a']:.3f} p_c={s['p_c']:.3f} p_tie={s['p_tie']:.3f}")
    return 0


def cmd_filter(args) -> int:
    cfg = _load_cfg(args)
    dataset = load_dataset(args.dataset or cfg.paths.dataset)
    committee = build_committee(cfg)
    part = consensus_partition(dataset, committee)
    base = Path(args.dataset or cfg.paths.dataset)
    out_l = args.out_labeled or str(base.with_name(base.stem + ".labeled.jsonl"))
    out_u = args.out_unlabeled or str(base.with_name(base.stem + ".unlabeled.jsonl"))
    extra = {"tool_version": __version__, "config_hash": config_hash(cfg)}
    if part.labeled:
        save_dataset(part.labeled, out_l, extra=extra)
    if part.unlabeled:
        save_dataset(part.unlabeled, out_u, extra=extra)
    stats = part.stats.as_dict()
    _write_json(str(base.with_name(base.stem + ".partition.json")),
                {**stats, **extra})
    frac = stats["n_labeled"] / stats["n_total"] if stats["n_total"] else 0.0
    print(f"labeled {stats['n_labeled']} / {stats['n_total']} pairs ({frac:.1%}) -> {out_l}")
    print(f"unlabeled {stats['n_unlabeled']} pairs -> {out_u}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out_dir = args.out_dir or cfg.paths.out_dir
    meta = {**_meta(cfg, args.workers), "mode": args.mode}
    if args.mode == "dpo_all":
        train_dpo_baseline(cfg, out_dir=out_dir, meta=meta, log=print)
    else:
        if args.mode == "clean_only":
            cfg = apply_overrides(cfg, ["train.iterations=0"])
            meta = {**_meta(cfg, args.workers), "mode": args.mode}
        run_pipeline(cfg, out_dir=out_dir, meta=meta, log=print)
    print(f"run artifacts in {out_dir}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _load_cfg(args)
    params, _ = load_checkpoint(args.checkpoint)
    ref, _ = load_checkpoint(args.ref) if args.ref else (params.copy(), None)
    if args.ref is None:
        # reference defaults to the same init the training runs used
        from .model import init_params
        from .semitrain import _streams
        ref = init_params(params.arch, np.random.default_rng(
            _streams(cfg.train.seed, cfg.train.iterations)["init"]))
    dataset = load_dataset(args.dataset or cfg.paths.dataset)
    sched = build_schedule(cfg)
    committee = build_committee(cfg)
    intervals = make_intervals(sched.T, cfg.thresholds.n_intervals)
    rng = np.random.default_rng(args.seed)
    eps_draws = rng.standard_normal((len(dataset), params.arch.d))
    reports = []
    for k in range(committee.K):
        for j, (lo, hi) in enumerate(intervals):
            t = (lo + hi + 1) // 2 + 1  # midpoint of the interval, 1-indexed
            t = min(max(t, lo + 1), hi)
            rep = variance_report(params, ref, dataset, k, t, eps_draws,
                                  cfg.beta_dpo, sched)
            reports.append({"dimension": k, "bucket": j, "t": int(t), **rep.as_dict()})
    payload = {"meta": _meta(cfg, args.workers), "seed": args.seed, "reports": reports}
    out = args.out or str(Path(cfg.paths.out_dir) / "variance_report.json")
    _write_json(out, payload)
    worst = min(r["var_xi"] - r["bound"] for r in reports)
    print(f"{len(reports)} reports -> {out}; min(var - bound) = {worst:.3e}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    params, _ = load_checkpoint(args.checkpoint)
    sched = build_schedule(cfg)
    committee = build_committee(cfg)
    prompts = prompt_grid(cfg.eval.n_prompts, params.arch.d_c, cfg.eval.seed)
    report = evaluate_model(params, committee, prompts,
                            cfg.eval.n_samples_per_prompt, sched, cfg.eval.seed)
    payload = {"meta": _meta(cfg, args.workers), "report": report.as_dict()}
    if args.baseline:
        base_params, _ = load_checkpoint(args.baseline)
        wins = compare_models(params, base_params, committee, prompts,
                              cfg.eval.n_samples_per_prompt, sched, cfg.eval.seed)
        payload["win_rate_vs_baseline"] = wins.tolist()
    out = args.out or str(Path(cfg.paths.out_dir) / "eval_report.json")
    _write_json(out, payload)
    print(f"aggregate {report.aggregate:.4f} over {report.n_samples} samples -> {out}")
    if args.baseline:
        print("win rates vs baseline: " +
              " ".join(f"{w:.3f}" for w in payload["win_rate_vs_baseline"]))
    return 0


def _add_common(p) -> None:
    p.add_argument("--config", help="JSON config file (defaults apply otherwise)")
    p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                   help="override a config field, e.g. --set train.lr_cold=5e-4")
    p.add_argument("--workers", type=int, default=1,
                   help="parallelism cap; 1 reproduces reference outputs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prefdiff",
                                 description="Preference-aligned diffusion lab")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic preference dataset")
    _add_common(p)
    p.add_argument("--out", help="dataset path (default: paths.dataset)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("filter", help="consensus-partition a dataset")
    _add_common(p)
    p.add_argument("--dataset", help="input dataset (default: paths.dataset)")
    p.add_argument("--out-labeled")
    p.add_argument("--out-unlabeled")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--mode", choices=("semi", "clean_only", "dpo_all"), default="semi")
    p.add_argument("--out-dir", help="run directory (default: paths.out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diagnose", help="gradient-variance bound reports")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ref", help="reference checkpoint (default: seeded init)")
    p.add_argument("--dataset", help="pairs with stored reward differences")
    p.add_argument("--seed", type=int, default=7, help="noise-draw seed")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("eval", help="score a checkpoint on the committee")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", help="optional second checkpoint for win rates")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print(f"error: --workers must be >= 1, got {args.workers}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DatasetFormatError, CheckpointFormatError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
