"""Parametric synthetic embedding datasets.

Classes live in a Gaussian mixture whose first ``dim - nuisance_dims``
coordinates carry the class signal (means drawn at scale ``class_sep``)
while the trailing ``nuisance_dims`` coordinates are pure noise shared by
every class. Anisotropic noise makes the Euclidean metric suboptimal,
which is exactly the headroom an adaptive metric should capture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset
from .errors import ParameterError


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int
    dim: int
    per_class: int
    class_sep: float
    noise_aniso: tuple
    nuisance_dims: int
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.dim < 1 or self.per_class < 1:
            raise ParameterError("n_classes, dim and per_class must be positive")
        if not self.class_sep >= 0:
            raise ParameterError(f"class_sep must be non-negative, got {self.class_sep}")
        stds = tuple(float(s) for s in self.noise_aniso)
        if len(stds) != self.dim:
            raise ParameterError(
                f"noise_aniso needs {self.dim} entries, got {len(stds)}"
            )
        if any(s <= 0 for s in stds):
            raise ParameterError("all noise stds must be positive")
        if not 0 <= self.nuisance_dims < self.dim:
            raise ParameterError("nuisance_dims must satisfy 0 <= nuisance_dims < dim")
        object.__setattr__(self, "noise_aniso", stds)


def generate(cfg: SynthConfig) -> EmbeddingDataset:
    """Draw the dataset described by ``cfg``, deterministically per seed.

    Rows come out class-major: ``per_class`` rows of class 0, then class 1,
    and so on.
    """
    rng = np.random.default_rng(cfg.seed)
    n_signal = cfg.dim - cfg.nuisance_dims
    means = np.zeros((cfg.n_classes, cfg.dim))
    means[:, :n_signal] = rng.normal(0.0, cfg.class_sep, size=(cfg.n_classes, n_signal))
    stds = np.asarray(cfg.noise_aniso)

    features = np.empty((cfg.n_classes * cfg.per_class, cfg.dim))
    labels = np.empty(cfg.n_classes * cfg.per_class, dtype=np.int64)
    for c in range(cfg.n_classes):
        lo = c * cfg.per_class
        noise = rng.normal(0.0, 1.0, size=(cfg.per_class, cfg.dim)) * stds
        features[lo : lo + cfg.per_class] = means[c] + noise
        labels[lo : lo + cfg.per_class] = c
    return EmbeddingDataset(features, labels)


def class_means(cfg: SynthConfig) -> np.ndarray:
    """The exact class means ``generate`` samples around (same seed stream)."""
    rng = np.random.default_rng(cfg.seed)
    n_signal = cfg.dim - cfg.nuisance_dims
    means = np.zeros((cfg.n_classes, cfg.dim))
    means[:, :n_signal] = rng.normal(0.0, cfg.class_sep, size=(cfg.n_classes, n_signal))
    return means


def aniso16(seed: int = 7) -> SynthConfig:
    """The default acceptance benchmark: 20 classes in 16 dimensions, 8
    signal dims of std 1 and 8 nuisance dims of std 3, class separation 3,
    200 points per class."""
    return SynthConfig(
        n_classes=20,
        dim=16,
        per_class=200,
        class_sep=3.0,
        noise_aniso=tuple([1.0] * 8 + [3.0] * 8),
        nuisance_dims=8,
        seed=seed,
    )
