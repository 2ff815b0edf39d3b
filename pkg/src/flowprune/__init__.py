"""Entropy-guided progressive block pruning for toy flow-matching transformers.

A desk-scale laboratory: train a small conditional residual-transformer
velocity network on toy distributions, rank its blocks by conditional
entropy deviation, and prune progressively with zero-shot proxies (NTK
condition number, ZiCo) voting on each stage's candidate subnetworks.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import Checkerboard, GaussianMixture, Glyphs, TwoMoons, make_dataset
from .entropy import (
    CedReport,
    EntropyEstimate,
    ProbeSpec,
    compute_ced,
    estimate_entropy,
    select_prunable,
)
from .errors import (
    ConfigError,
    DegenerateDistributionError,
    FlowPruneError,
    NumericError,
    PreconditionError,
)
from .evaluation import EvalReport, energy_distance, evaluate
from .interpolant import TimeSchedule
from .model import (
    BackboneConfig,
    SubnetMask,
    VelocityModel,
    extract_submodel,
    mac_count,
    mac_ratio,
    predict_velocity,
)
from .numerics import GradientTape, Tensor, backward, matmul, sym_eig
from .pruning import (
    PruneConfig,
    PruningSchedule,
    generate_candidates,
    run_oneshot,
    run_progressive,
    run_stage,
)
from .proxies import (
    NtkSpectrum,
    ProxyScores,
    ZicoScore,
    ntk_condition,
    rank_candidates,
    zico,
)
from .sampling import SamplerConfig, gaussian_oracle_velocity, sample_ode, sample_sde
from .training import fm_loss, forward_process, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "CedReport",
    "Checkerboard",
    "ConfigError",
    "DegenerateDistributionError",
    "EntropyEstimate",
    "EvalReport",
    "FlowPruneError",
    "GaussianMixture",
    "Glyphs",
    "GradientTape",
    "NtkSpectrum",
    "NumericError",
    "PreconditionError",
    "ProbeSpec",
    "ProxyScores",
    "PruneConfig",
    "PruningSchedule",
    "SamplerConfig",
    "SubnetMask",
    "Tensor",
    "TimeSchedule",
    "TwoMoons",
    "VelocityModel",
    "ZicoScore",
    "backward",
    "compute_ced",
    "energy_distance",
    "estimate_entropy",
    "evaluate",
    "extract_submodel",
    "fm_loss",
    "forward_process",
    "gaussian_oracle_velocity",
    "generate_candidates",
    "load_checkpoint",
    "mac_count",
    "mac_ratio",
    "make_dataset",
    "matmul",
    "ntk_condition",
    "predict_velocity",
    "rank_candidates",
    "run_oneshot",
    "run_progressive",
    "run_stage",
    "sample_ode",
    "sample_sde",
    "save_checkpoint",
    "select_prunable",
    "sym_eig",
    "train",
    "zico",
]
