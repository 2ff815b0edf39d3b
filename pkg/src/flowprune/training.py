"""Forward noising process, flow-matching loss, and the training loop.

The optimizer is plain SGD with momentum 0.9 -- no adaptive scaling -- so
raw gradient statistics stay interpretable for the gradient-based proxy
metrics. Only parameters of active blocks and shared components receive
updates; masked blocks are structurally excluded from the update set.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .errors import NumericError, PreconditionError
from .interpolant import TimeSchedule, check_time_in_unit_interval
from .model import SubnetMask, VelocityModel, predict_velocity
from .numerics import GradientTape, Tensor


def forward_process(x, t, noise, sched: TimeSchedule) -> tuple[Tensor, Tensor]:
    """Noised sample x_t = alpha(t) x + sigma(t) noise and the true velocity
    v = alpha'(t) x + sigma'(t) noise, rowwise."""
    x = np.asarray(x, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    t = check_time_in_unit_interval(t)
    if x.shape != noise.shape or x.shape[0] != t.shape[0]:
        raise PreconditionError(
            f"shape mismatch: x {x.shape}, noise {noise.shape}, t {t.shape}"
        )
    a, s = sched.alpha(t)[:, None], sched.sigma(t)[:, None]
    da, ds = sched.dalpha(t)[:, None], sched.dsigma(t)[:, None]
    x_t = a * x + s * noise
    v_true = da * x + ds * noise
    return nm.tensor(x_t), nm.tensor(v_true)


def draw_training_inputs(x, rng: np.random.Generator):
    """t ~ Uniform(0,1) and noise ~ N(0,I) matching the batch shape."""
    x = np.asarray(x, dtype=np.float64)
    t = rng.uniform(0.0, 1.0, size=x.shape[0])
    noise = rng.standard_normal(x.shape)
    return t, noise


def fm_loss(
    model: VelocityModel,
    mask: SubnetMask,
    batch,
    sched: TimeSchedule,
    rng: np.random.Generator,
    t=None,
    noise=None,
) -> Tensor:
    """Mean squared error between predicted and true velocity over a batch.

    t and noise are drawn from `rng` unless passed explicitly (paired
    evaluations reuse fixed draws).
    """
    x, labels = batch
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise PreconditionError("empty batch")
    if t is None or noise is None:
        t_drawn, noise_drawn = draw_training_inputs(x, rng)
        t = t_drawn if t is None else t
        noise = noise_drawn if noise is None else noise
    x_t, v_true = forward_process(x, t, noise, sched)
    pred = predict_velocity(model, mask, x_t, t, labels)
    diff = nm.sub(pred, v_true)
    return nm.mean(nm.mul(diff, diff))


def train(
    model: VelocityModel,
    mask: SubnetMask,
    dataset,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    sched: TimeSchedule | None = None,
    batch_size: int = 64,
    momentum: float = 0.9,
) -> list[float]:
    """SGD-with-momentum training; returns the per-step loss trace.

    Parameters of inactive blocks are untouched (no gradient flows to them
    and they are excluded from the update set), so they stay bit-identical.
    """
    if steps < 1:
        raise PreconditionError(f"steps must be >= 1, got {steps}")
    sched = sched or TimeSchedule()
    update_names = model.param_names(mask)
    velocity = {n: np.zeros(model.params[n].shape) for n in update_names}
    trace: list[float] = []
    for step in range(steps):
        x, labels = dataset.sample(batch_size, rng)
        tape = GradientTape({n: model.params[n] for n in update_names})
        try:
            loss = fm_loss(model, mask, (x, labels), sched, rng)
        except NumericError as exc:
            raise NumericError(f"training diverged at step {step}: {exc}") from exc
        grads = tape.gradients(loss)
        for n in update_names:
            velocity[n] = momentum * velocity[n] + grads[n].data
            model.params[n] = nm.parameter(model.params[n].data - lr * velocity[n])
        trace.append(loss.item())
    return trace


def validation_loss(
    model: VelocityModel,
    mask: SubnetMask,
    dataset,
    sched: TimeSchedule,
    seed: int,
    n: int = 512,
) -> float:
    """Deterministic held-out flow-matching loss (fixed seed, fresh samples)."""
    rng = np.random.default_rng(seed)
    x, labels = dataset.sample(n, rng)
    return fm_loss(model, mask, (x, labels), sched, rng).item()
