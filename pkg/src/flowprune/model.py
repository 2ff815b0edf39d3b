"""Conditional residual-transformer velocity network.

The input vector is projected onto a short token axis (default 4 tokens);
time and class embeddings are added to every token; then a stack of
pre-norm residual blocks (multi-head self-attention + 4x GELU MLP) runs,
and a linear head maps the tokens back to data space. Blocks are the
pruning granularity: disabling block i in a SubnetMask bypasses both of
its residual branches, which is arithmetically identical to deleting the
block while keeping the identity skip.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .errors import PreconditionError
from .numerics import Tensor


@dataclass(frozen=True)
class BackboneConfig:
    data_dim: int
    hidden_dim: int
    n_blocks: int
    n_heads: int
    n_classes: int
    seed: int = 0
    n_tokens: int = 4

    def __post_init__(self):
        if min(self.data_dim, self.hidden_dim, self.n_blocks, self.n_heads,
               self.n_classes, self.n_tokens) < 1:
            raise PreconditionError("all backbone dimensions must be positive")
        if self.hidden_dim % self.n_heads != 0:
            raise PreconditionError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )
        if self.n_blocks < 2:
            raise PreconditionError("need at least 2 blocks to have anything to prune")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def sin_dim(self) -> int:
        # sinusoidal time-feature width, rounded up to even
        return self.hidden_dim + (self.hidden_dim % 2)


@dataclass(frozen=True)
class SubnetMask:
    """Active-block indicator. At least one block must stay active."""

    active: tuple[bool, ...]

    def __post_init__(self):
        if not any(self.active):
            raise PreconditionError("a subnet mask must keep at least one block active")

    @staticmethod
    def full(n_blocks: int) -> "SubnetMask":
        return SubnetMask(active=(True,) * n_blocks)

    def drop(self, indices) -> "SubnetMask":
        indices = set(int(i) for i in indices)
        bad = [i for i in indices if not 0 <= i < len(self.active)]
        if bad:
            raise PreconditionError(f"block index out of range: {bad}")
        return SubnetMask(
            active=tuple(a and i not in indices for i, a in enumerate(self.active))
        )

    @property
    def n_blocks(self) -> int:
        return len(self.active)

    @property
    def n_active(self) -> int:
        return sum(self.active)

    @property
    def n_dropped(self) -> int:
        return self.n_blocks - self.n_active

    def active_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.active) if a]

    def dropped_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.active) if not a]

    def is_subset_of(self, other: "SubnetMask") -> bool:
        return all((not a) or b for a, b in zip(self.active, other.active))

    def bits(self) -> str:
        return "".join("1" if a else "0" for a in self.active)

    @staticmethod
    def from_bits(bits: str) -> "SubnetMask":
        return SubnetMask(active=tuple(c == "1" for c in bits))


_BLOCK_PARAM_SHAPES = (
    ("ln1.g", lambda h: (h,)),
    ("ln1.b", lambda h: (h,)),
    ("attn.wq", lambda h: (h, h)),
    ("attn.bq", lambda h: (h,)),
    ("attn.wk", lambda h: (h, h)),
    ("attn.bk", lambda h: (h,)),
    ("attn.wv", lambda h: (h, h)),
    ("attn.bv", lambda h: (h,)),
    ("attn.wo", lambda h: (h, h)),
    ("attn.bo", lambda h: (h,)),
    ("ln2.g", lambda h: (h,)),
    ("ln2.b", lambda h: (h,)),
    ("mlp.w1", lambda h: (h, 4 * h)),
    ("mlp.b1", lambda h: (4 * h,)),
    ("mlp.w2", lambda h: (4 * h, h)),
    ("mlp.b2", lambda h: (h,)),
)


class VelocityModel:
    """Parameter container plus forward evaluation. Parameters are immutable
    tensors; training swaps dict entries for new tensors (one writer), while
    evaluation only reads and may run concurrently."""

    def __init__(self, config: BackboneConfig):
        self.config = config
        self.block_scales = [1.0] * config.n_blocks
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(config.seed))

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        h, th = c.hidden_dim, c.n_tokens * c.hidden_dim

        def w(shape, std):
            return nm.parameter(rng.normal(scale=std, size=shape))

        def zeros(shape):
            return nm.parameter(np.zeros(shape))

        def ones(shape):
            return nm.parameter(np.ones(shape))

        p = self.params
        p["input.w"] = w((c.data_dim, th), 1.0 / np.sqrt(c.data_dim))
        p["input.b"] = zeros((th,))
        p["time.w1"] = w((c.sin_dim, h), 1.0 / np.sqrt(c.sin_dim))
        p["time.b1"] = zeros((h,))
        p["time.w2"] = w((h, h), 1.0 / np.sqrt(h))
        p["time.b2"] = zeros((h,))
        p["class.table"] = w((c.n_classes, h), 0.5)
        resid_std = 1.0 / (np.sqrt(h) * np.sqrt(2.0 * c.n_blocks))
        for i in range(c.n_blocks):
            pre = f"block{i}."
            p[pre + "ln1.g"] = ones((h,))
            p[pre + "ln1.b"] = zeros((h,))
            for nme in ("wq", "wk", "wv"):
                p[pre + "attn." + nme] = w((h, h), 1.0 / np.sqrt(h))
            p[pre + "attn.wo"] = w((h, h), resid_std)
            for nme in ("bq", "bk", "bv", "bo"):
                p[pre + "attn." + nme] = zeros((h,))
            p[pre + "ln2.g"] = ones((h,))
            p[pre + "ln2.b"] = zeros((h,))
            p[pre + "mlp.w1"] = w((h, 4 * h), 1.0 / np.sqrt(h))
            p[pre + "mlp.b1"] = zeros((4 * h,))
            p[pre + "mlp.w2"] = w((4 * h, h), resid_std / 2.0)
            p[pre + "mlp.b2"] = zeros((h,))
        p["head.ln.g"] = ones((h,))
        p["head.ln.b"] = zeros((h,))
        p["head.w"] = w((th, c.data_dim), 1.0 / np.sqrt(th))
        p["head.b"] = zeros((c.data_dim,))

    # -- parameter accounting -------------------------------------------------

    def full_mask(self) -> SubnetMask:
        return SubnetMask.full(self.config.n_blocks)

    def param_names(self, mask: SubnetMask | None = None) -> list[str]:
        """Names of parameters reachable under `mask` (shared + active blocks)."""
        if mask is not None and mask.n_blocks != self.config.n_blocks:
            raise PreconditionError("mask length does not match block count")
        names = []
        for name in self.params:
            if name.startswith("block"):
                i = int(name.split(".")[0][5:])
                if mask is not None and not mask.active[i]:
                    continue
            names.append(name)
        return names

    def param_count(self, mask: SubnetMask | None = None) -> int:
        return sum(self.params[n].data.size for n in self.param_names(mask))

    def set_param(self, name: str, values) -> None:
        if name not in self.params:
            raise PreconditionError(f"unknown parameter {name!r}")
        if np.shape(values) != self.params[name].shape:
            raise PreconditionError(f"shape mismatch for parameter {name!r}")
        self.params[name] = nm.parameter(values)

    def clone(self) -> "VelocityModel":
        """Independent copy sharing nothing mutable (tensors are immutable)."""
        other = VelocityModel(self.config)
        other.params = dict(self.params)
        other.block_scales = list(self.block_scales)
        return other


def expected_param_count(config: BackboneConfig) -> int:
    """By-hand closed-form parameter count, for validating the registry."""
    c = config
    h, th = c.hidden_dim, c.n_tokens * c.hidden_dim
    shared = (
        c.data_dim * th + th                       # input projection
        + c.sin_dim * h + h + h * h + h            # time MLP
        + c.n_classes * h                          # class table
        + 2 * h + th * c.data_dim + c.data_dim     # final norm + head
    )
    per_block = 12 * h * h + 13 * h
    return shared + c.n_blocks * per_block


def block_param_count(config: BackboneConfig) -> int:
    h = config.hidden_dim
    return 12 * h * h + 13 * h


def mac_count(config: BackboneConfig, mask: SubnetMask | None = None) -> int:
    """Analytic multiply count per sample (matmul multiplies only)."""
    c = config
    h, t = c.hidden_dim, c.n_tokens
    shared = c.data_dim * t * h + c.sin_dim * h + h * h + t * h * c.data_dim
    per_block = 12 * t * h * h + 2 * t * t * h
    n_active = c.n_blocks if mask is None else mask.n_active
    return shared + n_active * per_block


def mac_ratio(config: BackboneConfig, mask: SubnetMask) -> float:
    """Masked MACs as a fraction of the full model's."""
    return mac_count(config, mask) / mac_count(config)


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of t in [0, 1]; `dim` must be even."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = 2.0 * np.pi * np.exp(np.linspace(0.0, np.log(1000.0), half))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def predict_velocity(model: VelocityModel, mask: SubnetMask, x_t, t, labels) -> Tensor:
    """Evaluate the velocity network under a block mask.

    Inactive blocks are skipped entirely, so the computation is exactly the
    one a physically smaller model would perform. Deterministic given
    parameters and inputs.
    """
    c = model.config
    if mask.n_blocks != c.n_blocks:
        raise PreconditionError("mask length does not match block count")
    x_t = nm.tensor(x_t)
    t = np.asarray(t, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and labels.max() >= c.n_classes:
        raise PreconditionError(
            f"label {labels.max()} out of range for {c.n_classes} classes"
        )
    p = model.params
    b = x_t.shape[0]
    h, t_tok = c.hidden_dim, c.n_tokens

    tokens = nm.reshape(
        nm.add(nm.matmul(x_t, p["input.w"]), p["input.b"]), (b, t_tok, h)
    )
    tf = nm.tensor(time_features(t, c.sin_dim))
    temb = nm.add(
        nm.matmul(nm.gelu(nm.add(nm.matmul(tf, p["time.w1"]), p["time.b1"])),
                  p["time.w2"]),
        p["time.b2"],
    )
    cemb = nm.take_rows(p["class.table"], labels)
    cond = nm.reshape(nm.add(temb, cemb), (b, 1, h))
    tokens = nm.add(tokens, cond)

    for i in range(c.n_blocks):
        if not mask.active[i]:
            continue
        tokens = _block_forward(p, f"block{i}.", tokens, c, model.block_scales[i])

    out = nm.layer_norm(tokens, p["head.ln.g"], p["head.ln.b"])
    out = nm.reshape(out, (b, t_tok * h))
    return nm.add(nm.matmul(out, p["head.w"]), p["head.b"])


def _block_forward(p, pre: str, tokens: Tensor, c: BackboneConfig, gate: float) -> Tensor:
    b, t_tok, h = tokens.shape
    nh, hd = c.n_heads, c.head_dim

    a = nm.layer_norm(tokens, p[pre + "ln1.g"], p[pre + "ln1.b"])
    q = nm.add(nm.matmul(a, p[pre + "attn.wq"]), p[pre + "attn.bq"])
    k = nm.add(nm.matmul(a, p[pre + "attn.wk"]), p[pre + "attn.bk"])
    v = nm.add(nm.matmul(a, p[pre + "attn.wv"]), p[pre + "attn.bv"])
    q = nm.transpose(nm.reshape(q, (b, t_tok, nh, hd)), (0, 2, 1, 3))
    k = nm.transpose(nm.reshape(k, (b, t_tok, nh, hd)), (0, 2, 1, 3))
    v = nm.transpose(nm.reshape(v, (b, t_tok, nh, hd)), (0, 2, 1, 3))
    scores = nm.scale(nm.matmul(q, nm.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    attn = nm.matmul(nm.softmax(scores, axis=-1), v)
    attn = nm.reshape(nm.transpose(attn, (0, 2, 1, 3)), (b, t_tok, h))
    attn = nm.add(nm.matmul(attn, p[pre + "attn.wo"]), p[pre + "attn.bo"])
    tokens = nm.add(tokens, nm.scale(attn, gate))

    m = nm.layer_norm(tokens, p[pre + "ln2.g"], p[pre + "ln2.b"])
    m = nm.gelu(nm.add(nm.matmul(m, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]))
    m = nm.add(nm.matmul(m, p[pre + "mlp.w2"]), p[pre + "mlp.b2"])
    return nm.add(tokens, nm.scale(m, gate))


def extract_submodel(model: VelocityModel, mask: SubnetMask) -> VelocityModel:
    """Physically delete inactive blocks; surviving weights are shared bit-for-bit."""
    if mask.n_blocks != model.config.n_blocks:
        raise PreconditionError("mask length does not match block count")
    if mask.n_active < 2:
        raise PreconditionError("a standalone model needs at least 2 blocks")
    new_config = replace(model.config, n_blocks=mask.n_active)
    sub = VelocityModel(new_config)
    sub.params = {}
    sub.block_scales = []
    new_i = 0
    for name, tensor in model.params.items():
        if name.startswith("block"):
            continue
        sub.params[name] = tensor
    for old_i in mask.active_indices():
        for suffix, _ in _BLOCK_PARAM_SHAPES:
            sub.params[f"block{new_i}.{suffix}"] = model.params[f"block{old_i}.{suffix}"]
        sub.block_scales.append(model.block_scales[old_i])
        new_i += 1
    # keep a canonical ordering matching a freshly built model
    order = list(VelocityModel(new_config).params)
    sub.params = {n: sub.params[n] for n in order}
    return sub
