"""Class-conditional toy datasets with known ground-truth structure.

Each dataset samples on demand from a fixed generative recipe, so
held-out reference sets can be regenerated exactly from a seed. All
return float64 features of shape (n, data_dim) and int64 labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError


@dataclass
class GaussianMixture:
    """Components on a circle; the class label selects the component.

    `rotation` turns the component means, which gives a cheap "shifted
    target" variant of the same task for transfer-style experiments.
    """

    n_classes: int = 4
    radius: float = 2.0
    std: float = 0.35
    rotation: float = 0.0
    kind: str = field(default="gaussian_mixture", init=False)
    data_dim: int = field(default=2, init=False)

    def class_mean(self, c) -> np.ndarray:
        ang = 2.0 * np.pi * np.asarray(c) / self.n_classes + self.rotation
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)

    def sample(self, n: int, rng: np.random.Generator):
        labels = rng.integers(0, self.n_classes, size=n)
        return self.sample_conditional(labels, rng), labels

    def sample_conditional(self, labels, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.max() >= self.n_classes:
            raise PreconditionError("label outside the configured class count")
        means = self.class_mean(labels)
        return means + rng.normal(scale=self.std, size=means.shape)


@dataclass
class TwoMoons:
    """Two interleaved half-circles; the label picks the moon."""

    noise: float = 0.08
    kind: str = field(default="two_moons", init=False)
    data_dim: int = field(default=2, init=False)
    n_classes: int = field(default=2, init=False)

    def sample(self, n: int, rng: np.random.Generator):
        labels = rng.integers(0, 2, size=n)
        return self.sample_conditional(labels, rng), labels

    def sample_conditional(self, labels, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.max() >= 2:
            raise PreconditionError("two moons has classes {0, 1}")
        theta = rng.uniform(0.0, np.pi, size=labels.shape)
        x = np.empty((labels.size, 2))
        upper = labels == 0
        x[upper, 0] = np.cos(theta[upper])
        x[upper, 1] = np.sin(theta[upper])
        x[~upper, 0] = 1.0 - np.cos(theta[~upper])
        x[~upper, 1] = 0.5 - np.sin(theta[~upper])
        return x + rng.normal(scale=self.noise, size=x.shape)


@dataclass
class Checkerboard:
    """2-D checkerboard on [-2, 2]^2; the label is the square parity."""

    n_cells: int = 4
    kind: str = field(default="checkerboard", init=False)
    data_dim: int = field(default=2, init=False)
    n_classes: int = field(default=2, init=False)

    def sample(self, n: int, rng: np.random.Generator):
        labels = rng.integers(0, 2, size=n)
        return self.sample_conditional(labels, rng), labels

    def sample_conditional(self, labels, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.max() >= 2:
            raise PreconditionError("checkerboard has classes {0, 1}")
        out = np.empty((labels.size, 2))
        cell = 4.0 / self.n_cells
        for i, lab in enumerate(labels):
            while True:
                p = rng.uniform(-2.0, 2.0, size=2)
                ij = np.floor((p + 2.0) / cell).astype(int)
                if (ij.sum() % 2) == int(lab):
                    out[i] = p
                    break
        return out


_GLYPH_TEMPLATES = {
    "cross": [(3, j) for j in range(8)] + [(i, 4) for i in range(8)],
    "box": [(0, j) for j in range(8)]
    + [(7, j) for j in range(8)]
    + [(i, 0) for i in range(8)]
    + [(i, 7) for i in range(8)],
    "diag": [(i, i) for i in range(8)] + [(i, 7 - i) for i in range(8)],
    "dot": [(i, j) for i in range(3, 5) for j in range(3, 5)],
}


@dataclass
class Glyphs:
    """8x8 synthetic glyphs flattened to 64-dim vectors, one class per shape."""

    noise: float = 0.15
    kind: str = field(default="glyphs", init=False)
    data_dim: int = field(default=64, init=False)
    n_classes: int = field(default=len(_GLYPH_TEMPLATES), init=False)

    def __post_init__(self):
        base = np.zeros((self.n_classes, 8, 8))
        for c, pixels in enumerate(_GLYPH_TEMPLATES.values()):
            for i, j in pixels:
                base[c, i, j] = 1.0
        self._templates = base.reshape(self.n_classes, 64) - 0.5

    def sample(self, n: int, rng: np.random.Generator):
        labels = rng.integers(0, self.n_classes, size=n)
        return self.sample_conditional(labels, rng), labels

    def sample_conditional(self, labels, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and labels.max() >= self.n_classes:
            raise PreconditionError("label outside the glyph class count")
        x = self._templates[labels]
        return x + rng.normal(scale=self.noise, size=x.shape)


_KINDS = {
    "gaussian_mixture": GaussianMixture,
    "two_moons": TwoMoons,
    "checkerboard": Checkerboard,
    "glyphs": Glyphs,
}


def make_dataset(kind: str, **kwargs):
    if kind not in _KINDS:
        raise PreconditionError(
            f"unknown dataset kind {kind!r}; choose from {sorted(_KINDS)}"
        )
    return _KINDS[kind](**kwargs)
