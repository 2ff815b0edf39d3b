"""Progressive pruning scheduler with zero-shot candidate selection.

The target ratio is staged linearly over k stages. At each stage the
still-active blocks are considered in entropy-deviation order (lowest
first, fixed once on the initial model); candidates drop the next
0..width blocks of that order, are scored with the NTK condition number
and ZiCo on inherited weights, and the rank-vote winner trains for S/k
steps. Weights persist across stages; dropped blocks never return.

Candidate depth is capped at the minimal drop count that meets the final
parameter budget, and the final stage requires it, so the end state lands
within one block of the target ratio regardless of what the vote does at
intermediate stages.

A one-shot baseline (same final mask, all pruning at step 0, same total
steps) is provided for paired comparisons.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .entropy import CedReport, ProbeSpec, compute_ced, write_ced_csv
from .errors import PreconditionError
from .interpolant import TimeSchedule
from .model import SubnetMask, VelocityModel, block_param_count
from .proxies import (
    CandidateScore,
    ProxyScores,
    make_ntk_probe,
    ntk_condition,
    rank_candidates,
    write_scores_csv,
    zico,
)
from .training import train


@dataclass(frozen=True)
class PruneConfig:
    """Knobs of one pruning run. `total_steps` must divide evenly into stages."""

    target_ratio: float  # parameter fraction to remove, in [0, 1)
    stages: int = 4
    total_steps: int = 400
    gamma: float = 0.5
    candidate_width: int = 3
    lr: float = 0.02
    batch_size: int = 64
    ntk_probe_size: int = 16
    zico_batch_count: int = 2
    ced_probe_samples: int = 2048
    ced_probe_timesteps: int = 8

    def __post_init__(self):
        if not 0.0 <= self.target_ratio < 1.0:
            raise PreconditionError(
                f"target_ratio must be in [0, 1), got {self.target_ratio}"
            )
        if self.stages < 1 or self.total_steps < 1:
            raise PreconditionError("stages and total_steps must be positive")
        if self.total_steps % self.stages != 0:
            raise PreconditionError(
                f"total_steps {self.total_steps} not divisible by stages {self.stages}"
            )
        if self.gamma < 0 or self.candidate_width < 0:
            raise PreconditionError("gamma and candidate_width must be nonnegative")

    @property
    def steps_per_stage(self) -> int:
        return self.total_steps // self.stages

    def stage_target_params(self, full_params: int, stage: int) -> float:
        return full_params * (1.0 - self.target_ratio * stage / self.stages)


@dataclass
class StageRecord:
    stage_index: int
    mask: SubnetMask
    proxy_scores: ProxyScores | None
    trace: list[float]
    params_after: int
    seconds: float = 0.0
    inherited_params: dict | None = None  # snapshots, kept on request
    trained_params: dict | None = None


@dataclass
class PruningSchedule:
    stages: list[StageRecord]
    ced: CedReport
    full_params: int
    config: PruneConfig
    mode: str = "progressive"
    seeds: dict = field(default_factory=dict)

    @property
    def final_mask(self) -> SubnetMask:
        return self.stages[-1].mask

    @property
    def final_params(self) -> int:
        return self.stages[-1].params_after


def mask_params(prev_mask: SubnetMask, drops, block_params, shared_params) -> int:
    mask = prev_mask.drop(drops) if drops else prev_mask
    return shared_params + sum(block_params[i] for i in mask.active_indices())


def generate_candidates(
    ced: CedReport,
    prev_mask: SubnetMask,
    stage_target_params: float,
    width: int,
    block_params,
    shared_params: int,
    max_total_drop: int | None = None,
    enforce_target: bool = False,
) -> list[SubnetMask]:
    """Prefixes of the deviation order: drop the next 0..width still-active
    lowest-|CED| blocks. Always includes the smallest drop count meeting the
    stage's parameter target; never returns an empty list.

    `max_total_drop` caps the cumulative drop depth (used to stop
    intermediate stages from overshooting the final budget);
    `enforce_target` filters to candidates that meet the stage target.
    """
    if prev_mask.n_active < 2:
        raise PreconditionError("previous mask must have at least 2 active blocks")
    order = [i for i in ced.ranking if prev_mask.active[i]]
    already_dropped = prev_mask.n_dropped
    max_extra = prev_mask.n_active - 1
    if max_total_drop is not None:
        max_extra = min(max_extra, max(max_total_drop - already_dropped, 0))

    def params_after(extra: int) -> int:
        return mask_params(prev_mask, order[:extra], block_params, shared_params)

    minimal = None
    for extra in range(0, max_extra + 1):
        if params_after(extra) <= stage_target_params:
            minimal = extra
            break
    if minimal is None:
        raise PreconditionError(
            "target ratio too aggressive for block granularity"
        )
    depths = sorted(set(range(0, min(width, max_extra) + 1)) | {minimal})
    if enforce_target:
        depths = [d for d in depths if params_after(d) <= stage_target_params]
    return [prev_mask.drop(order[:d]) if d else prev_mask for d in depths]


def _stage_scores(
    model: VelocityModel,
    candidates: list[SubnetMask],
    cfg: PruneConfig,
    dataset,
    sched: TimeSchedule,
    rng: np.random.Generator,
) -> ProxyScores:
    """Score every candidate on shared, stage-fixed probes (fair comparison;
    kappa and ZiCo use independent draws). Degenerate proxies are flagged,
    not fatal: their capped/inf values rank last on that metric."""
    ntk_seed = int(rng.integers(0, 2**31))
    zico_seed = int(rng.integers(0, 2**31))
    probe = make_ntk_probe(dataset, sched, cfg.ntk_probe_size, ntk_seed)
    zrng = np.random.default_rng(zico_seed)
    batches = []
    for _ in range(cfg.zico_batch_count):
        x, labels = dataset.sample(cfg.batch_size, zrng)
        t = zrng.uniform(0.0, 1.0, size=x.shape[0])
        noise = zrng.standard_normal(x.shape)
        batches.append((x, labels, t, noise))
    raw = []
    for mask in candidates:
        spectrum = ntk_condition(model, mask, probe)
        zscore = zico(model, mask, batches, sched, zrng)
        raw.append(CandidateScore(
            mask=mask,
            kappa=spectrum.kappa,
            zico=zscore.value,
            params=model.param_count(mask),
            kappa_degenerate=spectrum.degenerate,
            zico_degenerate=zscore.degenerate,
        ))
    scores = rank_candidates(raw, cfg.gamma)
    scores.metadata = {"ntk_seed": ntk_seed, "zico_seed": zico_seed}
    return scores


def run_stage(
    model: VelocityModel,
    prev_mask: SubnetMask,
    ced: CedReport,
    cfg: PruneConfig,
    stage_index: int,
    dataset,
    rng: np.random.Generator,
    sched: TimeSchedule | None = None,
    full_params: int | None = None,
    max_total_drop: int | None = None,
    capture_snapshots: bool = False,
) -> StageRecord:
    """One stage: generate candidates, score on inherited weights, select,
    then train the winner for steps_per_stage."""
    if not 1 <= stage_index <= cfg.stages:
        raise PreconditionError(f"stage_index must be in [1, {cfg.stages}]")
    sched = sched or TimeSchedule()
    full_params = full_params or model.param_count()
    t0 = time.perf_counter()
    target = cfg.stage_target_params(full_params, stage_index)
    block_costs = [block_param_count(model.config)] * model.config.n_blocks
    shared = full_params - sum(block_costs)
    if prev_mask.n_active >= 2:
        candidates = generate_candidates(
            ced, prev_mask, target, cfg.candidate_width, block_costs, shared,
            max_total_drop=max_total_drop,
            enforce_target=(stage_index == cfg.stages),
        )
    else:
        if model.param_count(prev_mask) > target:
            raise PreconditionError("target ratio too aggressive for block granularity")
        candidates = [prev_mask]
    scores = _stage_scores(model, candidates, cfg, dataset, sched, rng)
    winner = scores.selected.mask
    snapshot = None
    if capture_snapshots:
        snapshot = {n: model.params[n].data.copy() for n in model.params}
    trace = train(model, winner, dataset, cfg.steps_per_stage, cfg.lr, rng,
                  sched=sched, batch_size=cfg.batch_size)
    trained = None
    if capture_snapshots:
        trained = {n: model.params[n].data.copy() for n in model.params}
    return StageRecord(
        stage_index=stage_index,
        mask=winner,
        proxy_scores=scores,
        trace=trace,
        params_after=model.param_count(winner),
        seconds=time.perf_counter() - t0,
        inherited_params=snapshot,
        trained_params=trained,
    )


def _final_drop_count(ced: CedReport, model: VelocityModel, cfg: PruneConfig) -> int:
    """Smallest deviation-order prefix whose removal meets the final budget."""
    full = model.param_count()
    target = cfg.stage_target_params(full, cfg.stages)
    block_costs = [block_param_count(model.config)] * model.config.n_blocks
    shared = full - sum(block_costs)
    full_mask = model.full_mask()
    for d in range(0, model.config.n_blocks):
        if mask_params(full_mask, ced.ranking[:d], block_costs, shared) <= target:
            return d
    raise PreconditionError("target ratio too aggressive for block granularity")


def _ced_once(model, cfg, dataset, rng, sched) -> tuple[CedReport, int]:
    seed = int(rng.integers(0, 2**31))
    probe = ProbeSpec(dataset=dataset, n_samples=cfg.ced_probe_samples,
                      n_timesteps=cfg.ced_probe_timesteps, seed=seed)
    return compute_ced(model, probe, sched), seed


def run_progressive(
    model: VelocityModel,
    cfg: PruneConfig,
    dataset,
    rng: np.random.Generator,
    sched: TimeSchedule | None = None,
    capture_snapshots: bool = False,
    out_dir=None,
) -> PruningSchedule:
    """Full adaptive pipeline: rank blocks once on the initial model, then
    run k stages of candidate generation, rank-vote selection, and training
    with weight inheritance."""
    sched = sched or TimeSchedule()
    full_params = model.param_count()
    ced, ced_seed = _ced_once(model, cfg, dataset, rng, sched)
    final_drop = _final_drop_count(ced, model, cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_ced_csv(ced, out / "ced.csv")
    mask = model.full_mask()
    records = []
    for stage in range(1, cfg.stages + 1):
        record = run_stage(
            model, mask, ced, cfg, stage, dataset, rng, sched=sched,
            full_params=full_params, max_total_drop=final_drop,
            capture_snapshots=capture_snapshots,
        )
        mask = record.mask
        records.append(record)
        if out is not None:
            write_scores_csv(record.proxy_scores, out / f"stage_{stage:02d}_scores.csv")
            _write_trace(record.trace, out / f"stage_{stage:02d}_trace.csv")
            save_checkpoint(out / f"stage_{stage:02d}_checkpoint.npz", model, mask)
    schedule = PruningSchedule(
        stages=records, ced=ced, full_params=full_params, config=cfg,
        mode="progressive", seeds={"ced": ced_seed},
    )
    if out is not None:
        save_checkpoint(out / "final_checkpoint.npz", model, schedule.final_mask)
    return schedule


def run_oneshot(
    model: VelocityModel,
    cfg: PruneConfig,
    dataset,
    rng: np.random.Generator,
    sched: TimeSchedule | None = None,
    out_dir=None,
) -> PruningSchedule:
    """Ablation baseline: drop every target block (lowest deviation first)
    at step 0, then train for the same total step count."""
    sched = sched or TimeSchedule()
    full_params = model.param_count()
    ced, ced_seed = _ced_once(model, cfg, dataset, rng, sched)
    final_drop = _final_drop_count(ced, model, cfg)
    mask = model.full_mask()
    if final_drop:
        mask = mask.drop(ced.ranking[:final_drop])
    t0 = time.perf_counter()
    trace = train(model, mask, dataset, cfg.total_steps, cfg.lr, rng,
                  sched=sched, batch_size=cfg.batch_size)
    record = StageRecord(
        stage_index=1, mask=mask, proxy_scores=None, trace=trace,
        params_after=model.param_count(mask), seconds=time.perf_counter() - t0,
    )
    schedule = PruningSchedule(
        stages=[record], ced=ced, full_params=full_params, config=cfg,
        mode="oneshot", seeds={"ced": ced_seed},
    )
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_ced_csv(ced, out / "ced.csv")
        _write_trace(trace, out / "stage_01_trace.csv")
        save_checkpoint(out / "final_checkpoint.npz", model, mask)
    return schedule


def _write_trace(trace, path) -> None:
    with open(path, "w", newline="\n") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(trace):
            f.write(f"{i},{loss:.17g}\n")
