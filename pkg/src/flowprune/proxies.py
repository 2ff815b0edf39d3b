"""Zero-shot trainability proxies and rank-vote aggregation.

Candidate subnetworks are scored on inherited weights without training:

* NTK condition number: Gram matrix of per-sample parameter gradients of a
  scalarized output; kappa = largest/smallest eigenvalue. Smaller means the
  slowest eigenmode converges faster.
* ZiCo: per layer, log of the summed mean/std ratio of per-parameter
  absolute gradients across a few mini-batches, negated so that lower is
  better for both metrics.

Scores on different scales are combined by competition ranks: the winner
minimizes rank(kappa) + rank(zico) + gamma * rank(params).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nm
from .errors import PreconditionError
from .interpolant import TimeSchedule
from .model import SubnetMask, VelocityModel, predict_velocity
from .numerics import GradientTape, Tensor
from .training import fm_loss, forward_process

KAPPA_CAP = 1e12
LAMBDA_FLOOR = 1e-12  # smallest eigenvalue floored at this fraction of the largest


@dataclass
class NtkSpectrum:
    gram: Tensor
    eigenvalues: np.ndarray  # descending
    kappa: float
    degenerate: bool = False
    scalarization: str = "mean-over-output-dims"


def ntk_from_jacobian(jacobian: np.ndarray) -> NtkSpectrum:
    """Spectrum of J J^T with the smallest eigenvalue floored for ranking."""
    j = np.asarray(jacobian, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] < 2:
        raise PreconditionError("jacobian must be (b, n_params) with b >= 2")
    gram = j @ j.T
    eigenvalues, _ = nm.sym_eig(gram)
    lam0 = float(eigenvalues[0])
    lam_m = float(eigenvalues[-1])
    if lam0 <= 0.0:
        return NtkSpectrum(nm.tensor(gram), eigenvalues, KAPPA_CAP, degenerate=True)
    floor = LAMBDA_FLOOR * lam0
    degenerate = lam_m < floor
    kappa = lam0 / max(lam_m, floor)
    return NtkSpectrum(nm.tensor(gram), eigenvalues, kappa, degenerate=degenerate)


def ntk_condition(
    model: VelocityModel,
    mask: SubnetMask,
    probe,
    output_scale: float = 1.0,
    max_jacobian_rows: int = 4096,
) -> NtkSpectrum:
    """Empirical NTK over a probe batch, w.r.t. all active parameters.

    Each sample's velocity output is reduced to a scalar (mean over output
    dims) before differentiation, so the Gram is b x b. `output_scale`
    multiplies the scalarization; it rescales the spectrum by its square
    and must leave kappa unchanged.
    """
    x_t, t, labels = probe
    x_t = np.asarray(getattr(x_t, "data", x_t), dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = x_t.shape[0]
    if b < 2:
        raise PreconditionError("NTK probe needs at least 2 samples")
    if b * model.config.data_dim > max_jacobian_rows:
        raise PreconditionError(
            f"probe too large: b*d_out = {b * model.config.data_dim} > {max_jacobian_rows}"
        )
    names = model.param_names(mask)
    sizes = [model.params[n].data.size for n in names]
    jac = np.empty((b, sum(sizes)))
    for j in range(b):
        tape = GradientTape({n: model.params[n] for n in names})
        out = predict_velocity(model, mask, x_t[j : j + 1], t[j : j + 1],
                               labels[j : j + 1])
        s = nm.scale(nm.mean(out), output_scale)
        grads = tape.gradients(s)
        jac[j] = np.concatenate([grads[n].data.ravel() for n in names])
    return ntk_from_jacobian(jac)


def make_ntk_probe(dataset, sched: TimeSchedule, b: int, seed: int):
    """Draw a (x_t, t, label) probe batch for NTK scoring."""
    rng = np.random.default_rng(seed)
    x, labels = dataset.sample(b, rng)
    t = rng.uniform(0.0, 1.0, size=b)
    noise = rng.standard_normal(x.shape)
    x_t, _ = forward_process(x, t, noise, sched)
    return x_t.data, t, labels


@dataclass
class ZicoLayer:
    layer_name: str
    sum_ratio: float
    degenerate: bool = False


@dataclass
class ZicoScore:
    value: float  # negated sum of log layer ratios; lower is better
    per_layer: list[ZicoLayer]
    d_batches: int
    degenerate: bool = False  # every layer excluded
    n_degenerate_layers: int = 0
    gradients: list[dict] | None = None  # per-batch snapshots, kept on request


def zico_from_gradients(snapshots: list[dict]) -> ZicoScore:
    """Aggregate per-batch gradient snapshots into the ZiCo statistic.

    Per scalar parameter: mean and population std of |grad| across the D
    snapshots; ratio mean/std summed within each layer (one layer = one
    named parameter tensor). Scalars with zero spread carry no cross-batch
    signal and contribute 0; a layer where every scalar has zero spread is
    flagged degenerate and excluded from the sum with a warning count.
    """
    if len(snapshots) < 2:
        raise PreconditionError("ZiCo needs at least 2 gradient snapshots")
    names = list(snapshots[0])
    per_layer: list[ZicoLayer] = []
    total = 0.0
    n_degenerate = 0
    for name in names:
        stack = np.abs(np.stack([np.asarray(getattr(s[name], "data", s[name]))
                                 for s in snapshots]))
        mu = stack.mean(axis=0)
        sd = stack.std(axis=0)  # population (divide by D)
        live = sd > 0.0
        if not live.any():
            per_layer.append(ZicoLayer(name, 0.0, degenerate=True))
            n_degenerate += 1
            continue
        sum_ratio = float((mu[live] / sd[live]).sum())
        per_layer.append(ZicoLayer(name, sum_ratio))
        total += np.log(sum_ratio)
    all_degenerate = n_degenerate == len(names)
    return ZicoScore(
        value=float("inf") if all_degenerate else -total,
        per_layer=per_layer,
        d_batches=len(snapshots),
        degenerate=all_degenerate,
        n_degenerate_layers=n_degenerate,
    )


def zico(
    model: VelocityModel,
    mask: SubnetMask,
    batches,
    sched: TimeSchedule,
    rng: np.random.Generator,
    keep_gradients: bool = False,
) -> ZicoScore:
    """ZiCo over D mini-batches on the current weights (no updates).

    Each batch is (x, labels) with t/noise drawn from `rng`, or
    (x, labels, t, noise) with fixed draws. Only active parameters
    participate; inactive blocks are structurally absent.
    """
    if len(batches) < 2:
        raise PreconditionError("ZiCo needs at least 2 batches (default D=2)")
    names = model.param_names(mask)
    snapshots = []
    for batch in batches:
        if len(batch) == 4:
            x, labels, t, noise = batch
        else:
            x, labels = batch
            t = noise = None
        tape = GradientTape({n: model.params[n] for n in names})
        loss = fm_loss(model, mask, (x, labels), sched, rng, t=t, noise=noise)
        grads = tape.gradients(loss)
        snapshots.append({n: grads[n].data for n in names})
    score = zico_from_gradients(snapshots)
    if keep_gradients:
        score = replace(score, gradients=snapshots)
    return score


# ---------------------------------------------------------------------------
# rank aggregation


@dataclass
class CandidateScore:
    mask: SubnetMask
    kappa: float
    zico: float
    params: int
    kappa_degenerate: bool = False
    zico_degenerate: bool = False
    rank_kappa: int = 0
    rank_zico: int = 0
    rank_params: int = 0
    total: float = 0.0
    selected: bool = False


@dataclass
class ProxyScores:
    candidates: list[CandidateScore]  # sorted, best first
    gamma: float
    metadata: dict = field(default_factory=dict)

    @property
    def selected(self) -> CandidateScore:
        return self.candidates[0]


def competition_ranks(values) -> list[int]:
    """1 = smallest; ties share the smaller rank, following ranks skip."""
    vals = list(values)
    return [1 + sum(1 for other in vals if other < v) for v in vals]


def rank_candidates(raw: list[CandidateScore], gamma: float) -> ProxyScores:
    """Assign per-metric competition ranks and order by total rank score.

    Ties on total break by smaller params, then fewer dropped blocks, then
    lexicographic mask bits.
    """
    if not raw:
        raise PreconditionError("no candidates to rank")
    if gamma < 0:
        raise PreconditionError("gamma must be nonnegative")
    rk = competition_ranks([c.kappa for c in raw])
    rz = competition_ranks([c.zico for c in raw])
    rp = competition_ranks([c.params for c in raw])
    scored = []
    for c, a, b_, p in zip(raw, rk, rz, rp):
        scored.append(replace(c, rank_kappa=a, rank_zico=b_, rank_params=p,
                              total=a + b_ + gamma * p, selected=False))
    scored.sort(key=lambda c: (c.total, c.params, c.mask.n_dropped, c.mask.bits()))
    scored[0] = replace(scored[0], selected=True)
    return ProxyScores(candidates=scored, gamma=gamma)


def write_scores_csv(scores: ProxyScores, path) -> None:
    with open(path, "w", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mask_bits", "kappa", "zico", "params", "rank_kappa",
                    "rank_zico", "rank_params", "total", "selected"])
        for c in scores.candidates:
            w.writerow([
                c.mask.bits(), f"{c.kappa:.17g}", f"{c.zico:.17g}", c.params,
                c.rank_kappa, c.rank_zico, c.rank_params, f"{c.total:.17g}",
                int(c.selected),
            ])
