"""Gaussian-assumption output entropy and per-block entropy deviation.

Block importance is scored by how far the output distribution's entropy
moves when a single block is bypassed: the signed deviation separates
drift-toward-noise (positive) from mode collapse (negative), and the
absolute value ranks blocks for pruning (low deviation = redundant).

All per-block evaluations reuse one fixed probe -- same inputs, timesteps,
noise -- so deviations are paired differences, not estimator noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDistributionError, PreconditionError
from .interpolant import TimeSchedule
from .model import SubnetMask, VelocityModel, predict_velocity
from .training import forward_process

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EntropyEstimate:
    """Differential entropy of a scalar Gaussian fitted to the outputs."""

    h: float
    sigma: float
    n_samples: int


def estimate_entropy(outputs) -> EntropyEstimate:
    """Fit one scalar sigma to all flattened entries; closed-form entropy
    h = ln(sigma) + ln(2*pi)/2 + 1/2."""
    data = np.asarray(getattr(outputs, "data", outputs), dtype=np.float64)
    if data.ndim < 1 or data.shape[0] < 2:
        raise PreconditionError("entropy estimation needs at least 2 samples")
    flat = data.ravel()
    sigma = float(flat.std())  # population convention
    if sigma <= 0.0 or not np.isfinite(sigma):
        raise DegenerateDistributionError()
    h = float(np.log(sigma) + 0.5 * LOG_2PI + 0.5)
    return EntropyEstimate(h=h, sigma=sigma, n_samples=data.shape[0])


@dataclass
class ProbeSpec:
    """Fixed probe for paired entropy evaluations.

    `n_samples` counts total evaluated rows; they are formed by crossing
    n_samples / n_timesteps data points with a stratified midpoint grid of
    timesteps (fixed grid, not random: keeps the estimator variance well
    below the block-to-block deviations). Labels are drawn uniformly.
    """

    dataset: object
    n_samples: int = 2048
    n_timesteps: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2 * self.n_timesteps:
            raise PreconditionError("probe too small for the timestep grid")

    def describe(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "t_sampling_rule": f"stratified-midpoint:{self.n_timesteps}",
            "data_source": getattr(self.dataset, "kind", type(self.dataset).__name__),
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ProbeBatch:
    x_t: np.ndarray
    t: np.ndarray
    labels: np.ndarray


def build_probe(spec: ProbeSpec, sched: TimeSchedule) -> ProbeBatch:
    rng = np.random.default_rng(spec.seed)
    m = spec.n_samples // spec.n_timesteps
    x, labels = spec.dataset.sample(m, rng)
    grid = (np.arange(spec.n_timesteps) + 0.5) / spec.n_timesteps
    x_rep = np.repeat(x, spec.n_timesteps, axis=0)
    labels_rep = np.repeat(labels, spec.n_timesteps)
    t_rep = np.tile(grid, m)
    noise = rng.standard_normal(x_rep.shape)
    x_t, _ = forward_process(x_rep, t_rep, noise, sched)
    return ProbeBatch(x_t=x_t.data, t=t_rep, labels=labels_rep)


@dataclass
class CedReport:
    """Per-block signed entropy deviation plus the absolute-value ranking."""

    signed_ced: list[float]
    abs_ced: list[float]
    ranking: list[int]  # block indices, ascending abs_ced, ties to lower index
    base_entropy: EntropyEstimate
    probe_spec: dict = field(default_factory=dict)

    @property
    def n_blocks(self) -> int:
        return len(self.signed_ced)

    def rank_of(self, block: int) -> int:
        return self.ranking.index(block) + 1

    def to_rows(self) -> list[dict]:
        return [
            {
                "block_index": i,
                "signed_ced": self.signed_ced[i],
                "abs_ced": self.abs_ced[i],
                "rank": self.rank_of(i),
            }
            for i in range(self.n_blocks)
        ]


def rank_blocks(abs_ced) -> list[int]:
    """Block indices sorted ascending by |deviation|, ties to the lower index."""
    return sorted(range(len(abs_ced)), key=lambda i: (abs_ced[i], i))


def compute_ced(
    model: VelocityModel, probe: ProbeSpec, sched: TimeSchedule
) -> CedReport:
    """Entropy of the full model minus entropy with each block bypassed,
    over one shared probe (paired design)."""
    batch = build_probe(probe, sched)
    full = model.full_mask()
    base_out = predict_velocity(model, full, batch.x_t, batch.t, batch.labels)
    base = estimate_entropy(base_out)
    signed: list[float] = []
    for i in range(model.config.n_blocks):
        dropped = full.drop([i])
        out = predict_velocity(model, dropped, batch.x_t, batch.t, batch.labels)
        try:
            est = estimate_entropy(out)
        except DegenerateDistributionError as exc:
            raise DegenerateDistributionError(
                f"block {i}: {exc}"
            ) from exc
        signed.append(est.h - base.h)
    abs_ced = [abs(s) for s in signed]
    return CedReport(
        signed_ced=signed,
        abs_ced=abs_ced,
        ranking=rank_blocks(abs_ced),
        base_entropy=base,
        probe_spec=probe.describe(),
    )


def select_prunable(report: CedReport, n_drop: int) -> SubnetMask:
    """Mask disabling the n_drop lowest-|deviation| blocks."""
    if not 0 <= n_drop < report.n_blocks:
        raise PreconditionError(
            f"n_drop must be in [0, {report.n_blocks}), got {n_drop}"
        )
    return SubnetMask.full(report.n_blocks).drop(report.ranking[:n_drop])


def write_ced_csv(report: CedReport, path) -> None:
    with open(path, "w", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["block_index", "signed_ced", "abs_ced", "rank"])
        for row in report.to_rows():
            w.writerow([
                row["block_index"],
                f"{row['signed_ced']:.17g}",
                f"{row['abs_ced']:.17g}",
                row["rank"],
            ])


def block_loss_deltas(
    model: VelocityModel,
    dataset,
    sched: TimeSchedule,
    seed: int,
    n: int = 512,
) -> list[float]:
    """Validation-loss increase from dropping each block alone (brute force)."""
    from .training import validation_loss

    full = model.full_mask()
    base = validation_loss(model, full, dataset, sched, seed, n)
    return [
        validation_loss(model, full.drop([i]), dataset, sched, seed, n) - base
        for i in range(model.config.n_blocks)
    ]
