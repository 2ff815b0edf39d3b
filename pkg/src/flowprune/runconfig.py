"""Strict YAML run configuration.

Unknown keys are rejected with the line they appear on; every seed is
either explicit or derived deterministically from the master seed, so a
config plus a master seed pins every random draw in a run.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .datasets import make_dataset
from .errors import ConfigError, PreconditionError
from .model import BackboneConfig
from .pruning import PruneConfig
from .sampling import SamplerConfig


def derive_seed(master: int, tag: str) -> int:
    """Stable per-purpose sub-seed from the master seed."""
    seq = np.random.SeedSequence((master, zlib.crc32(tag.encode())))
    return int(seq.generate_state(1)[0])


def derive_rng(master: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master, zlib.crc32(tag.encode()))))


_MODEL_KEYS = {"data_dim", "hidden_dim", "n_blocks", "n_heads", "n_classes",
               "seed", "n_tokens"}
_DATA_KEYS = {"kind", "size", "seed", "params"}
_TRAIN_KEYS = {"steps", "lr", "batch", "momentum"}
_PRUNE_KEYS = {"target_ratio", "stages", "total_steps", "gamma",
               "candidate_width", "lr", "batch", "ntk_probe_size",
               "zico_batch_count", "ced_probe_samples", "ced_probe_timesteps"}
_SAMPLER_KEYS = {"kind", "steps", "sde_noise_scale", "seed", "n_samples"}
_TOP_KEYS = {"seed", "output_dir", "model", "data", "train", "prune", "sampler"}


@dataclass
class DataConfig:
    kind: str
    size: int = 4096
    seed: int = 0
    params: dict = field(default_factory=dict)

    def build(self):
        try:
            return make_dataset(self.kind, **self.params)
        except (PreconditionError, TypeError) as exc:
            raise ConfigError(f"data section: {exc}") from exc


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 0.02
    batch: int = 64
    momentum: float = 0.9


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/latest"
    model: BackboneConfig | None = None
    data: DataConfig | None = None
    train: TrainConfig | None = None
    prune: PruneConfig | None = None
    sampler: SamplerConfig | None = None
    sampler_n_samples: int = 1024

    def require(self, *sections: str) -> None:
        for s in sections:
            if getattr(self, s) is None:
                raise ConfigError(f"config is missing the required '{s}' section")


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers via the YAML node tree."""
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if not isinstance(node, yaml.MappingNode):
            return
        for key_node, value_node in node.value:
            path = f"{prefix}{key_node.value}"
            lines[path] = key_node.start_mark.line + 1
            walk(value_node, path + ".")

    root = yaml.compose(text)
    if root is not None:
        walk(root, "")
    return lines


def _check_keys(mapping, allowed, prefix, lines):
    if mapping is None:
        return {}
    if not isinstance(mapping, dict):
        line = lines.get(prefix.rstrip("."), 0)
        raise ConfigError(f"line {line}: '{prefix.rstrip('.')}' must be a mapping")
    for key in mapping:
        path = f"{prefix}{key}"
        if key not in allowed:
            raise ConfigError(f"line {lines.get(path, 0)}: unknown key '{path}'")
    return mapping


def load_run_config(path, master_seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark else "unknown line"
        raise ConfigError(f"{path}: invalid YAML at {where}: {exc}") from exc
    if raw is None:
        raw = {}
    _check_keys(raw, _TOP_KEYS, "", lines)

    cfg = RunConfig()
    cfg.seed = int(raw.get("seed", 0)) if master_seed is None else int(master_seed)
    cfg.output_dir = str(raw.get("output_dir", cfg.output_dir))

    model_raw = _check_keys(raw.get("model"), _MODEL_KEYS, "model.", lines)
    if model_raw:
        model_raw = dict(model_raw)
        model_raw.setdefault("seed", derive_seed(cfg.seed, "model"))
        try:
            cfg.model = BackboneConfig(**model_raw)
        except (PreconditionError, TypeError) as exc:
            raise ConfigError(
                f"line {lines.get('model', 0)}: invalid model section: {exc}"
            ) from exc

    data_raw = _check_keys(raw.get("data"), _DATA_KEYS, "data.", lines)
    if data_raw:
        data_raw = dict(data_raw)
        data_raw.setdefault("seed", derive_seed(cfg.seed, "data"))
        cfg.data = DataConfig(**data_raw)
        cfg.data.build()  # validate dataset kwargs now, with config context

    train_raw = _check_keys(raw.get("train"), _TRAIN_KEYS, "train.", lines)
    if train_raw:
        cfg.train = TrainConfig(**train_raw)

    prune_raw = _check_keys(raw.get("prune"), _PRUNE_KEYS, "prune.", lines)
    if prune_raw:
        prune_raw = dict(prune_raw)
        if "batch" in prune_raw:
            prune_raw["batch_size"] = prune_raw.pop("batch")
        try:
            cfg.prune = PruneConfig(**prune_raw)
        except PreconditionError as exc:
            raise ConfigError(
                f"line {lines.get('prune', 0)}: invalid prune section: {exc}"
            ) from exc

    sampler_raw = _check_keys(raw.get("sampler"), _SAMPLER_KEYS, "sampler.", lines)
    if sampler_raw:
        sampler_raw = dict(sampler_raw)
        cfg.sampler_n_samples = int(sampler_raw.pop("n_samples", cfg.sampler_n_samples))
        sampler_raw.setdefault("seed", derive_seed(cfg.seed, "sampler"))
        try:
            cfg.sampler = SamplerConfig(**sampler_raw)
        except PreconditionError as exc:
            raise ConfigError(
                f"line {lines.get('sampler', 0)}: invalid sampler section: {exc}"
            ) from exc

    if cfg.model is not None and cfg.data is not None:
        ds = cfg.data.build()
        if ds.data_dim != cfg.model.data_dim:
            raise ConfigError(
                f"data dim {ds.data_dim} does not match model data_dim "
                f"{cfg.model.data_dim}"
            )
        if ds.n_classes > cfg.model.n_classes:
            raise ConfigError(
                f"dataset has {ds.n_classes} classes but the model embeds only "
                f"{cfg.model.n_classes}"
            )
    return cfg


def config_echo(cfg: RunConfig) -> dict:
    """JSON-serializable snapshot of the effective configuration."""

    def section(value):
        return None if value is None else asdict(value)

    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "model": section(cfg.model),
        "data": section(cfg.data),
        "train": section(cfg.train),
        "prune": section(cfg.prune),
        "sampler": section(cfg.sampler),
        "sampler_n_samples": cfg.sampler_n_samples,
    }
