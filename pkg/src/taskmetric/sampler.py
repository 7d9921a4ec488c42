"""Episode sampling: plain N-way K-shot draws and the semi-supervised
labeled/unlabeled split protocol.

Sampling is without replacement within an episode and with replacement
across episodes. Everything is a pure function of (dataset, config, rng),
so identical seeds reproduce identical episodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import UNLABELED, EmbeddingDataset, Episode, EpisodeConfig
from .errors import ParameterError, SamplingError


def as_rng(rng) -> np.random.Generator:
    """Coerce an int seed, SeedSequence or Generator into a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SemiSplitConfig:
    """Per-class labeled/unlabeled partition of a dataset.

    ``labeled_fraction`` of each class (rounded) becomes the labeled pool;
    the rest is the unlabeled pool. The partition is a deterministic
    function of ``split_seed`` and is fixed across all episodes of a run.
    """

    labeled_fraction: float
    split_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ParameterError(
                f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}"
            )


def _class_pools(dataset: EmbeddingDataset) -> dict:
    return {int(c): dataset.rows_of_class(int(c)) for c in dataset.classes()}


def _draw_episode_rows(
    dataset: EmbeddingDataset, config: EpisodeConfig, rng: np.random.Generator
):
    """Pick N classes and per-class support/query row indices."""
    pools = _class_pools(dataset)
    classes = np.asarray(sorted(pools))
    if classes.size < config.n_way:
        raise SamplingError(
            f"need {config.n_way} classes, dataset has {classes.size}"
        )
    chosen = rng.choice(classes, size=config.n_way, replace=False)
    need = config.k_shot + config.n_query_per_class
    support_rows, query_rows = [], []
    for c in chosen:
        pool = pools[int(c)]
        if pool.size < need:
            raise SamplingError(
                f"class {int(c)} has {pool.size} examples, episode needs {need}"
            )
        picked = rng.choice(pool, size=need, replace=False)
        support_rows.append(picked[: config.k_shot])
        query_rows.append(picked[config.k_shot :])
    return chosen, support_rows, query_rows


def _assemble(dataset, config, chosen, support_rows, query_rows, unlabeled_x=None):
    sx = np.concatenate([dataset.features[r] for r in support_rows], axis=0)
    qx = np.concatenate([dataset.features[r] for r in query_rows], axis=0)
    sy = np.repeat(np.arange(config.n_way), config.k_shot)
    qy = np.repeat(np.arange(config.n_way), config.n_query_per_class)
    return Episode(sx, sy, qx, qy, unlabeled_x)


def sample_episode(
    dataset: EmbeddingDataset, config: EpisodeConfig, rng=None
) -> Episode:
    """Draw one N-way K-shot episode.

    Classes are picked uniformly without replacement, then K support and
    n_query_per_class query rows per class, all without replacement, so
    support and query never share a dataset row. Class ids are remapped to
    0..N-1 in selection order.
    """
    rng = as_rng(config.seed if rng is None else rng)
    chosen, support_rows, query_rows = _draw_episode_rows(dataset, config, rng)
    return _assemble(dataset, config, chosen, support_rows, query_rows)


def split_labeled_unlabeled(dataset: EmbeddingDataset, split: SemiSplitConfig):
    """Partition every class into labeled and unlabeled row indices.

    Returns (labeled, unlabeled): dicts mapping class id to sorted row
    index arrays. Rounding is half-up on labeled_fraction * class_size.
    """
    rng = np.random.default_rng(split.split_seed)
    labeled, unlabeled = {}, {}
    for c in dataset.classes():
        pool = dataset.rows_of_class(int(c))
        n_lab = int(np.floor(split.labeled_fraction * pool.size + 0.5))
        perm = rng.permutation(pool)
        labeled[int(c)] = np.sort(perm[:n_lab])
        unlabeled[int(c)] = np.sort(perm[n_lab:])
    return labeled, unlabeled


def sample_semi_episode(
    dataset: EmbeddingDataset,
    config: EpisodeConfig,
    split: SemiSplitConfig,
    unlabeled_per_episode: int,
    rng=None,
) -> Episode:
    """Draw an episode under the semi-supervised protocol.

    Support and query come from the labeled partition only; the episode's
    unlabeled pool holds ``unlabeled_per_episode`` points drawn from the
    unlabeled partition of the same N selected classes.
    """
    if unlabeled_per_episode < 0:
        raise ParameterError("unlabeled_per_episode must be non-negative")
    rng = as_rng(config.seed if rng is None else rng)
    labeled, unlabeled = split_labeled_unlabeled(dataset, split)

    need = config.k_shot + config.n_query_per_class
    for c, rows in labeled.items():
        if rows.size < need:
            raise SamplingError(
                f"class {c}: labeled partition has {rows.size} rows, episode needs {need}"
            )

    lab_rows = np.sort(np.concatenate(list(labeled.values())))
    view = dataset.subset(lab_rows)
    chosen, support_rows, query_rows = _draw_episode_rows(view, config, rng)

    unlabeled_x = None
    if unlabeled_per_episode > 0:
        pool = np.concatenate([unlabeled[int(c)] for c in chosen])
        if pool.size == 0:
            raise SamplingError(
                "unlabeled partition of the selected classes is empty"
            )
        if pool.size < unlabeled_per_episode:
            raise SamplingError(
                f"requested {unlabeled_per_episode} unlabeled points, "
                f"only {pool.size} available in the selected classes"
            )
        picked = rng.choice(np.sort(pool), size=unlabeled_per_episode, replace=False)
        unlabeled_x = dataset.features[picked]

    return _assemble(view, config, chosen, support_rows, query_rows, unlabeled_x)
