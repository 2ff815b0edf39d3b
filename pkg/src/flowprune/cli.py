"""Command-line driver: train, analyze, prune, eval, report.

Every command is reproducible: the same config and master seed produce
byte-identical numeric CSV outputs. Exit codes: 0 success, 2 config
error, 3 numeric failure, 4 precondition violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from .checkpoint import load_checkpoint, save_checkpoint
from .entropy import ProbeSpec, block_loss_deltas, compute_ced, write_ced_csv
from .errors import ConfigError, NumericError, PreconditionError
from .evaluation import evaluate, write_samples_csv
from .interpolant import TimeSchedule
from .model import VelocityModel, mac_ratio
from .pruning import run_oneshot, run_progressive
from .runconfig import RunConfig, config_echo, derive_rng, derive_seed, load_run_config
from .sampling import SamplerConfig, sample
from .training import train, validation_loss


def _out_dir(cfg: RunConfig, override) -> Path:
    out = Path(override) if override else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, payload: dict) -> None:
    with open(out / "manifest.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _write_trace_csv(path: Path, trace) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(trace):
            f.write(f"{i},{loss:.17g}\n")


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed)
    cfg.require("model", "data", "train")
    out = _out_dir(cfg, args.out)
    dataset = cfg.data.build()
    model = VelocityModel(cfg.model)
    rng = derive_rng(cfg.seed, "train")
    t0 = time.perf_counter()
    trace = train(model, model.full_mask(), dataset, cfg.train.steps,
                  cfg.train.lr, rng, batch_size=cfg.train.batch,
                  momentum=cfg.train.momentum)
    seconds = time.perf_counter() - t0
    save_checkpoint(out / "checkpoint.npz", model, model.full_mask())
    _write_trace_csv(out / "trace.csv", trace)
    _write_manifest(out, {
        "command": "train",
        "config": config_echo(cfg),
        "seconds": seconds,
        "final_loss": trace[-1],
        "params": model.param_count(),
    })
    print(f"trained {cfg.train.steps} steps; final loss {trace[-1]:.4f}; "
          f"checkpoint at {out / 'checkpoint.npz'}")
    return 0


def cmd_analyze(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed)
    cfg.require("data")
    out = _out_dir(cfg, args.out)
    model, _ = load_checkpoint(args.checkpoint)
    dataset = cfg.data.build()
    sched = TimeSchedule()
    probe = ProbeSpec(dataset=dataset, n_samples=args.probe_samples,
                      n_timesteps=args.probe_timesteps,
                      seed=derive_seed(cfg.seed, "ced-probe"))
    report = compute_ced(model, probe, sched)
    write_ced_csv(report, out / "ced.csv")
    with open(out / "ced_plot.csv", "w", newline="\n") as f:
        f.write("block_index,signed_ced\n")
        for i, s in enumerate(report.signed_ced):
            f.write(f"{i},{s:.17g}\n")
    deltas = block_loss_deltas(model, dataset, sched,
                               seed=derive_seed(cfg.seed, "loss-delta"))
    rho = float(stats.spearmanr(report.abs_ced, deltas).statistic)
    with open(out / "loss_deltas.csv", "w", newline="\n") as f:
        f.write("block_index,loss_delta\n")
        for i, d in enumerate(deltas):
            f.write(f"{i},{d:.17g}\n")
    _write_manifest(out, {
        "command": "analyze",
        "config": config_echo(cfg),
        "probe": report.probe_spec,
        "spearman_absced_lossdelta": rho,
        "ranking": report.ranking,
    })
    print(f"base entropy {report.base_entropy.h:.4f} nats; "
          f"ranking {report.ranking}; "
          f"spearman(|ced|, loss-delta) = {rho:.3f}")
    return 0


def cmd_prune(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed)
    cfg.require("data", "prune")
    out = _out_dir(cfg, args.out)
    dataset = cfg.data.build()
    sched = TimeSchedule()
    model, _ = load_checkpoint(args.checkpoint)
    t0 = time.perf_counter()
    schedule = run_progressive(
        model, cfg.prune, dataset, derive_rng(cfg.seed, "prune-progressive"),
        sched=sched, out_dir=out / "progressive",
    )
    timings = {"progressive": time.perf_counter() - t0}
    manifest = {
        "command": "prune",
        "config": config_echo(cfg),
        "no_pruning_performed": cfg.prune.target_ratio == 0.0,
        "full_params": schedule.full_params,
        "progressive": {
            "seeds": schedule.seeds,
            "stages": [
                {"stage": r.stage_index, "mask": r.mask.bits(),
                 "params_after": r.params_after,
                 "final_loss": r.trace[-1], "seconds": r.seconds}
                for r in schedule.stages
            ],
        },
    }
    comparison = [_summary_row("progressive", schedule, model, dataset, cfg, sched)]

    if args.baseline == "oneshot":
        base_model, _ = load_checkpoint(args.checkpoint)
        t0 = time.perf_counter()
        oneshot = run_oneshot(
            base_model, cfg.prune, dataset, derive_rng(cfg.seed, "prune-oneshot"),
            sched=sched, out_dir=out / "oneshot",
        )
        timings["oneshot"] = time.perf_counter() - t0
        manifest["oneshot"] = {
            "seeds": oneshot.seeds,
            "mask": oneshot.final_mask.bits(),
            "params_after": oneshot.final_params,
        }
        comparison.append(_summary_row("oneshot", oneshot, base_model, dataset,
                                       cfg, sched))
    manifest["seconds"] = timings
    _write_manifest(out, manifest)
    with open(out / "comparison.csv", "w", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mode", "final_params", "final_mask", "val_loss",
                    "energy_distance"])
        for row in comparison:
            w.writerow(row)
    for mode, params, bits, val, ed in comparison:
        print(f"{mode}: params {params}, mask {bits}, val loss {float(val):.4f}, "
              f"energy distance {float(ed):.4f}")
    return 0


def _summary_row(mode, schedule, model, dataset, cfg: RunConfig, sched):
    """Final-model quality row for the paired comparison CSV."""
    val = validation_loss(model, schedule.final_mask, dataset, sched,
                          seed=derive_seed(cfg.seed, "compare-val"), n=1024)
    sampler = cfg.sampler or SamplerConfig(
        kind="ode", steps=50, seed=derive_seed(cfg.seed, "compare-sampler"))
    n = min(cfg.sampler_n_samples, 1024)
    rng = derive_rng(cfg.seed, "compare-labels")
    labels = rng.integers(0, dataset.n_classes, size=n)
    generated = sample(model, schedule.final_mask, labels, sched, sampler)
    reference = dataset.sample_conditional(
        labels, derive_rng(cfg.seed, "compare-reference"))
    report = evaluate(generated, reference, labels)
    return [mode, schedule.final_params, schedule.final_mask.bits(),
            f"{val:.17g}", f"{report.energy_distance:.17g}"]


def _resolve_checkpoint(path_str: str) -> Path:
    path = Path(path_str)
    if path.is_dir():
        for candidate in ("final_checkpoint.npz", "checkpoint.npz",
                          "progressive/final_checkpoint.npz"):
            if (path / candidate).exists():
                return path / candidate
        raise ConfigError(f"no checkpoint found under run directory {path}")
    return path


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, master_seed=args.seed)
    cfg.require("data")
    out = _out_dir(cfg, args.out)
    model, mask = load_checkpoint(_resolve_checkpoint(args.checkpoint))
    dataset = cfg.data.build()
    sched = TimeSchedule()
    kinds = [args.sampler] if args.sampler else ["ode"]
    base_sampler = cfg.sampler or SamplerConfig(
        kind="ode", steps=50, seed=derive_seed(cfg.seed, "eval-sampler"))
    n = cfg.sampler_n_samples
    labels = derive_rng(cfg.seed, "eval-labels").integers(0, dataset.n_classes,
                                                          size=n)
    reference = dataset.sample_conditional(labels,
                                           derive_rng(cfg.seed, "eval-reference"))
    results = {}
    for kind in kinds:
        sampler = SamplerConfig(kind=kind, steps=base_sampler.steps,
                                sde_noise_scale=base_sampler.sde_noise_scale,
                                seed=base_sampler.seed)
        generated = sample(model, mask, labels, sched, sampler)
        write_samples_csv(out / f"samples_{kind}.csv", generated, labels)
        report = evaluate(generated, reference, labels)
        results[kind] = {
            "energy_distance": report.energy_distance,
            "per_class_mean_error": report.per_class_mean_error,
            "sample_entropy": report.sample_entropy.h,
            "n_generated": report.n_generated,
        }
        print(f"{kind}: energy distance {report.energy_distance:.4f}, "
              f"per-class mean error {report.per_class_mean_error:.4f}")
    payload = {
        "command": "eval",
        "config": config_echo(cfg),
        "mask": mask.bits(),
        "params": model.param_count(mask),
        "active_blocks": mask.n_active,
        "total_blocks": mask.n_blocks,
        "mac_ratio_vs_full": mac_ratio(model.config, mask),
        "results": results,
    }
    with open(out / "eval_report.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, payload)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    print(f"command: {manifest.get('command')}")
    if "progressive" in manifest:
        print("stage  mask        params   final_loss")
        for stage in manifest["progressive"]["stages"]:
            print(f"{stage['stage']:>5}  {stage['mask']:<10}  "
                  f"{stage['params_after']:>7}  {stage['final_loss']:.4f}")
    comparison = run_dir / "comparison.csv"
    if comparison.exists():
        print(comparison.read_text().rstrip())
    for key in ("spearman_absced_lossdelta", "mac_ratio_vs_full", "params"):
        if key in manifest:
            print(f"{key}: {manifest[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowprune",
        description="entropy-guided progressive block pruning for toy "
                    "flow-matching transformers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides config)")
        p.add_argument("--out", default=None, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint file (or run directory for eval)")

    p_train = sub.add_parser("train", help="pretrain the full model")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_analyze = sub.add_parser("analyze", help="per-block entropy deviation report")
    common(p_analyze, checkpoint=True)
    p_analyze.add_argument("--probe-samples", type=int, default=2048)
    p_analyze.add_argument("--probe-timesteps", type=int, default=8)
    p_analyze.set_defaults(fn=cmd_analyze)

    p_prune = sub.add_parser("prune", help="progressive pruning run")
    common(p_prune, checkpoint=True)
    p_prune.add_argument("--baseline", choices=["oneshot"], default=None,
                         help="also run the one-shot baseline for comparison")
    p_prune.set_defaults(fn=cmd_prune)

    p_eval = sub.add_parser("eval", help="sample and score a checkpoint")
    common(p_eval, checkpoint=True)
    p_eval.add_argument("--sampler", choices=["ode", "sde"], default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_report = sub.add_parser("report", help="summarize a run directory")
    p_report.add_argument("--run-dir", required=True)
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except PreconditionError as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
