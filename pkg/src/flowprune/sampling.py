"""Reverse-process samplers: Euler ODE and Euler-Maruyama SDE.

Both integrate from x(1) ~ N(0, I) down to t = 0. The SDE shares the
ODE's marginals for any diffusion strength; its drift needs the score,
which is recovered from the learned velocity via the interpolant algebra:

    x_t = a(t) E[x|x_t] + s(t) E[eps|x_t]
    v   = a'(t) E[x|x_t] + s'(t) E[eps|x_t]
 => E[eps|x_t] = (a'(t) x_t - a(t) v) / (a'(t) s(t) - a(t) s'(t))
    score      = -E[eps|x_t] / s(t)

Choosing the diffusion coefficient w(t) = c^2 s(t) makes the drift
correction (w/2) * score = -(c^2 / 2) E[eps|x_t]: the 1/s(t) pole cancels
and the backward step stays finite all the way to t = 0. c is the
configured noise scale; c = 0 reduces to the ODE path bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError
from .interpolant import TimeSchedule
from .model import SubnetMask, VelocityModel, predict_velocity


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ode"  # "ode" | "sde"; sde_noise_scale ignored for ode
    steps: int = 50
    sde_noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ode", "sde"):
            raise PreconditionError(f"sampler kind must be ode or sde, got {self.kind!r}")
        if self.steps < 1:
            raise PreconditionError("steps must be >= 1")
        if self.sde_noise_scale < 0:
            raise PreconditionError("sde_noise_scale must be nonnegative")


def model_velocity(model: VelocityModel, mask: SubnetMask, labels):
    labels = np.asarray(labels, dtype=np.int64)

    def v(x: np.ndarray, t: float) -> np.ndarray:
        tv = np.full(x.shape[0], t)
        return predict_velocity(model, mask, x, tv, labels).data

    return v


def integrate_ode(velocity_fn, x0: np.ndarray, t0: float, t1: float, steps: int):
    """Uniform-step Euler integration of dx/dt = v(x, t) from t0 to t1."""
    if steps < 1:
        raise PreconditionError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64)
    h = (t1 - t0) / steps
    for i in range(steps):
        t = t0 + i * h
        try:
            x = x + h * velocity_fn(x, t)
        except NumericError as exc:
            raise NumericError(f"ODE state non-finite at step {i}: {exc}") from exc
        if not np.isfinite(x.sum()) and not np.all(np.isfinite(x)):
            raise NumericError(f"ODE state non-finite at step {i}")
    return x


def sample_ode(
    model: VelocityModel,
    mask: SubnetMask,
    labels,
    sched: TimeSchedule,
    cfg: SamplerConfig,
) -> np.ndarray:
    """Euler probability-flow sampling from noise to data, one row per label."""
    if cfg.kind != "ode":
        raise PreconditionError("sample_ode requires cfg.kind == 'ode'")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    x1 = rng.standard_normal((labels.size, model.config.data_dim))
    v = model_velocity(model, mask, labels)
    return integrate_ode(v, x1, 1.0, 0.0, cfg.steps)


def sample_sde(
    model: VelocityModel,
    mask: SubnetMask,
    labels,
    sched: TimeSchedule,
    cfg: SamplerConfig,
) -> np.ndarray:
    """Euler-Maruyama sampling with the velocity-derived drift correction."""
    if cfg.kind != "sde":
        raise PreconditionError("sample_sde requires cfg.kind == 'sde'")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    x1 = rng.standard_normal((labels.size, model.config.data_dim))
    v = model_velocity(model, mask, labels)
    c = cfg.sde_noise_scale
    if c == 0.0:
        # degenerate SDE: exactly the ODE trajectory, same code path
        return integrate_ode(v, x1, 1.0, 0.0, cfg.steps)
    x = x1
    h = 1.0 / cfg.steps
    for i in range(cfg.steps):
        t = 1.0 - i * h
        try:
            vel = v(x, t)
        except NumericError as exc:
            raise NumericError(f"SDE state non-finite at step {i}: {exc}") from exc
        a, s = float(sched.alpha(t)), float(sched.sigma(t))
        da, ds = float(sched.dalpha(t)), float(sched.dsigma(t))
        denom = da * s - a * ds
        if abs(denom) < 1e-12:
            raise NumericError(f"interpolant degenerate at t={t}")
        eps_hat = (da * x - a * vel) / denom
        drift = vel + 0.5 * c * c * eps_hat  # v - (w/2) score with w = c^2 s(t)
        w = c * c * s
        x = x - h * drift + np.sqrt(w * h) * rng.standard_normal(x.shape)
        if not np.isfinite(x.sum()) and not np.all(np.isfinite(x)):
            raise NumericError(f"SDE state non-finite at step {i}")
    return x


def sample(model, mask, labels, sched, cfg: SamplerConfig) -> np.ndarray:
    if cfg.kind == "ode":
        return sample_ode(model, mask, labels, sched, cfg)
    return sample_sde(model, mask, labels, sched, cfg)


def gaussian_oracle_velocity(mean, std: float, sched: TimeSchedule):
    """Exact velocity field transporting N(0, I) to N(mean, std^2 I).

    With m(t) = a(t) mean and var(t) = a(t)^2 std^2 + s(t)^2, the posterior
    algebra gives v(x, t) = a'(t) mean + r(t) (x - m(t)) with
    r(t) = (a a' std^2 + s s') / var. Under the flow the normalized
    deviation z = (x - m(t)) / sqrt(var(t)) is invariant, so the exact
    endpoint map is x(0) = mean + std * x(1).
    """
    mean = np.asarray(mean, dtype=np.float64)

    def v(x: np.ndarray, t) -> np.ndarray:
        a, s = float(sched.alpha(t)), float(sched.sigma(t))
        da, ds = float(sched.dalpha(t)), float(sched.dsigma(t))
        var = a * a * std * std + s * s
        rate = (a * da * std * std + s * ds) / var
        return da * mean + rate * (x - a * mean)

    return v
