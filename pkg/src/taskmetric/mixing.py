"""Task-internal mixing: label-preserving convex combinations of support
examples, applied on an on/off episode schedule after a warmup phase.

A synthetic point ``omega * x_i + (1 - omega) * x_j`` keeps the label of
``x_i``, which is only justified while ``omega > 0.5``; draws landing on
the lower bound are rejected and resampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode
from .errors import ParameterError
from .sampler import as_rng


@dataclass(frozen=True)
class TimConfig:
    """Mixing weight interval, per-instance fan-out and schedule."""

    low: float = 0.5
    high: float = 1.0
    mixes_per_instance: int = 2
    warmup_episodes: int = 5000
    on_episodes: int = 4
    off_episodes: int = 1

    def __post_init__(self):
        if not 0.5 <= self.low < self.high <= 1.0:
            raise ParameterError(
                f"need 0.5 <= low < high <= 1.0, got low={self.low}, high={self.high}"
            )
        if self.mixes_per_instance < 1:
            raise ParameterError("mixes_per_instance must be >= 1")
        if self.warmup_episodes < 0 or self.off_episodes < 0:
            raise ParameterError("warmup_episodes and off_episodes must be >= 0")
        if self.on_episodes < 1:
            raise ParameterError("on_episodes must be >= 1")


def mixing_active(cfg: TimConfig, episode_index: int) -> bool:
    """Whether mixing applies at this position of the episode stream."""
    if episode_index < cfg.warmup_episodes:
        return False
    pos = (episode_index - cfg.warmup_episodes) % (cfg.on_episodes + cfg.off_episodes)
    return pos < cfg.on_episodes


def mix_pair(x_i: np.ndarray, x_j: np.ndarray, omega: float) -> np.ndarray:
    """Componentwise convex combination ``omega * x_i + (1 - omega) * x_j``.

    The caller assigns the result the label of ``x_i``; omega must lie in
    (0.5, 1.0] for that assignment to be meaningful.
    """
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise ParameterError(f"shape mismatch: {x_i.shape} vs {x_j.shape}")
    if not 0.5 < omega <= 1.0:
        raise ParameterError(f"omega must lie in (0.5, 1.0], got {omega}")
    return omega * x_i + (1.0 - omega) * x_j


def _draw_omega(cfg: TimConfig, rng: np.random.Generator) -> float:
    omega = rng.uniform(cfg.low, cfg.high)
    while omega <= cfg.low:
        omega = rng.uniform(cfg.low, cfg.high)
    return float(omega)


def augment_episode(
    episode: Episode, cfg: TimConfig, episode_index: int, rng=None
) -> Episode:
    """Replace each support instance by ``mixes_per_instance`` mixes with
    uniformly random same-episode partners, when the schedule is on.

    Off-schedule episodes are returned unchanged. Query and unlabeled sets
    are never modified, and per-class balance is preserved (each class ends
    up with k_shot * mixes_per_instance support rows).
    """
    if not mixing_active(cfg, episode_index):
        return episode
    rng = as_rng(rng)
    sx, sy = episode.support_x, episode.support_y
    n = sx.shape[0]
    new_x = np.empty((n * cfg.mixes_per_instance, sx.shape[1]))
    new_y = np.repeat(sy, cfg.mixes_per_instance)
    row = 0
    for i in range(n):
        for _ in range(cfg.mixes_per_instance):
            j = int(rng.integers(n - 1)) if n > 1 else i
            if j >= i:
                j += 1 if n > 1 else 0
            omega = _draw_omega(cfg, rng)
            new_x[row] = mix_pair(sx[i], sx[j], omega)
            row += 1
    return Episode(new_x, new_y, episode.query_x, episode.query_y, episode.unlabeled_x)
