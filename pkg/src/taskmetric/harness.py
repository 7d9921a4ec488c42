"""Trial orchestration: batched evaluation, ablation rows, shot sweeps and
the semi-supervised protocol.

Every comparative operation is paired: all arms of a comparison see the
exact same sampled episodes, so differences are never sampling noise.
Reports carry the mean accuracy, a 1.96-normal 95% confidence halfwidth,
the per-trial accuracies and a configuration echo.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifier import classify, score
from .data import (
    EmbeddingDataset,
    Episode,
    EpisodeConfig,
    MetricHyperParams,
    MetricMatrix,
    PrototypeBank,
)
from .errors import ParameterError
from .metric import (
    ScatterPair,
    closed_form_metric,
    episode_metric,
    episode_prototypes,
    metric_objective,
    oracle_solve,
    sparsity_report,
)
from .sampler import SemiSplitConfig, sample_episode, sample_semi_episode
from .trainer import EmbeddingModel, _embedded_episode


@dataclass(frozen=True)
class AblationSpec:
    """Feature switches for one evaluation arm: mixing during training,
    the adapted metric, and bi-directional similarity at inference."""

    tim: bool = False
    eam: bool = False
    bisim: bool = False

    def label(self) -> str:
        if not (self.tim or self.eam or self.bisim):
            return "baseline"
        parts = [name for name in ("tim", "eam", "bisim") if getattr(self, name)]
        return "+".join(parts)


ABLATION_ROWS = (
    AblationSpec(False, False, False),
    AblationSpec(True, False, False),
    AblationSpec(True, True, False),
    AblationSpec(True, True, True),
)


@dataclass
class TrialReport:
    mean_accuracy: float
    ci95_halfwidth: float
    n_trials: int
    per_trial_accuracies: np.ndarray
    config_echo: dict = field(default_factory=dict)
    degenerate_ci: bool = False
    note: str | None = None


def _make_report(accs: np.ndarray, config_echo: dict, note: str | None = None) -> TrialReport:
    accs = np.asarray(accs, dtype=np.float64)
    n = accs.shape[0]
    degenerate = n < 2
    halfwidth = 0.0 if degenerate else float(1.96 * accs.std(ddof=1) / np.sqrt(n))
    return TrialReport(
        mean_accuracy=float(accs.mean()),
        ci95_halfwidth=halfwidth,
        n_trials=n,
        per_trial_accuracies=accs,
        config_echo=dict(config_echo),
        degenerate_ci=degenerate,
        note=note,
    )


def trial_seeds(seed: int, n_trials: int):
    """Child seed sequences, one per trial; shared across paired arms."""
    return np.random.SeedSequence(seed).spawn(n_trials)


def evaluate_episode(
    episode: Episode,
    hp: MetricHyperParams,
    spec: AblationSpec,
    model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
    squared: bool = False,
) -> float:
    """Accuracy of one episode under the given switches.

    The mixing switch never applies here; it is a training-time device.
    """
    if model is not None:
        episode = _embedded_episode(model, episode)
    if spec.eam:
        metric = episode_metric(episode, hp, bank=bank)
    else:
        metric = MetricMatrix.identity(episode.dim)
    table = classify(
        episode.query_x,
        episode_prototypes(episode),
        metric,
        mode="bisim" if spec.bisim else "positive_only",
        squared=squared,
    )
    return score(table, episode.query_y)


def _config_echo(episode_cfg, hp, spec, n_trials, seed, extra=None) -> dict:
    echo = {
        "n_way": episode_cfg.n_way,
        "k_shot": episode_cfg.k_shot,
        "n_query_per_class": episode_cfg.n_query_per_class,
        "alpha": hp.alpha,
        "gamma": hp.gamma,
        "lambda": hp.lam,
        "knn_k": hp.knn_k,
        "pd_floor": hp.pd_floor,
        "prior": "identity" if hp.prior is None else "explicit",
        "tim": spec.tim,
        "eam": spec.eam,
        "bisim": spec.bisim,
        "n_trials": n_trials,
        "seed": seed,
    }
    if extra:
        echo.update(extra)
    return echo


def run_trials(
    dataset: EmbeddingDataset,
    episode_cfg: EpisodeConfig,
    hp: MetricHyperParams,
    spec: AblationSpec,
    n_trials: int,
    seed: int,
    model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
    squared: bool = False,
    workers: int | None = None,
) -> TrialReport:
    """Evaluate ``n_trials`` freshly sampled episodes and aggregate.

    Trials are independent; with ``workers`` they run on a thread pool,
    and accuracies are always aggregated in trial order.
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be positive")
    seeds = trial_seeds(seed, n_trials)

    def one(t: int) -> float:
        rng = np.random.default_rng(seeds[t])
        episode = sample_episode(dataset, episode_cfg, rng)
        return evaluate_episode(episode, hp, spec, model=model, bank=bank, squared=squared)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(one, range(n_trials)))
    else:
        accs = [one(t) for t in range(n_trials)]
    return _make_report(accs, _config_echo(episode_cfg, hp, spec, n_trials, seed))


def run_ablation_suite(
    dataset: EmbeddingDataset,
    episode_cfg: EpisodeConfig,
    hp: MetricHyperParams,
    n_trials: int,
    seed: int,
    model: EmbeddingModel | None = None,
    tim_model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
) -> list:
    """The four standard rows, evaluated on identical episodes per trial.

    Rows with the mixing switch use ``tim_model`` (a model trained with
    mixing) when provided; without one they carry a note, since mixing is
    training-time only and cannot be realized at evaluation.
    """
    seeds = trial_seeds(seed, n_trials)
    episodes = [
        sample_episode(dataset, episode_cfg, np.random.default_rng(s)) for s in seeds
    ]
    out = []
    for spec in ABLATION_ROWS:
        arm_model = tim_model if (spec.tim and tim_model is not None) else model
        note = None
        if spec.tim and tim_model is None:
            note = "requires trained model (mixing is training-time; identical to no-tim arm here)"
        accs = [
            evaluate_episode(ep, hp, spec, model=arm_model, bank=bank) for ep in episodes
        ]
        out.append(
            (spec, _make_report(accs, _config_echo(episode_cfg, hp, spec, n_trials, seed), note))
        )
    return out


@dataclass
class ShotResult:
    k_shot: int
    baseline: TrialReport
    adapted: TrialReport

    @property
    def delta(self) -> float:
        return self.adapted.mean_accuracy - self.baseline.mean_accuracy


def run_shot_sweep(
    dataset: EmbeddingDataset,
    shots,
    n_way: int,
    n_query_per_class: int,
    hp: MetricHyperParams,
    n_trials: int,
    seed: int,
    model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
) -> list:
    """Paired baseline-versus-full-pipeline reports per shot count K,
    with the improvement delta for each K."""
    if not shots:
        raise ParameterError("shots list must be non-empty")
    baseline_spec = AblationSpec(False, False, False)
    adapted_spec = AblationSpec(False, True, True)
    results = []
    for k in shots:
        cfg = EpisodeConfig(n_way=n_way, k_shot=int(k), n_query_per_class=n_query_per_class)
        seeds = trial_seeds(seed, n_trials)
        episodes = [
            sample_episode(dataset, cfg, np.random.default_rng(s)) for s in seeds
        ]
        base_accs = [
            evaluate_episode(ep, hp, baseline_spec, model=model, bank=bank)
            for ep in episodes
        ]
        adapted_accs = [
            evaluate_episode(ep, hp, adapted_spec, model=model, bank=bank)
            for ep in episodes
        ]
        results.append(
            ShotResult(
                k_shot=int(k),
                baseline=_make_report(
                    base_accs, _config_echo(cfg, hp, baseline_spec, n_trials, seed)
                ),
                adapted=_make_report(
                    adapted_accs, _config_echo(cfg, hp, adapted_spec, n_trials, seed)
                ),
            )
        )
    return results


@dataclass
class SemiResult:
    """Per-split paired reports plus the aggregate over all splits."""

    per_split: list  # [(split_seed, semi_report, labeled_report)]
    semi_overall: TrialReport
    labeled_overall: TrialReport

    @property
    def split_wins(self) -> int:
        """Splits where the unlabeled pool strictly improved the mean."""
        return sum(
            1 for _, semi, lab in self.per_split
            if semi.mean_accuracy > lab.mean_accuracy
        )


def run_semi(
    dataset: EmbeddingDataset,
    episode_cfg: EpisodeConfig,
    hp: MetricHyperParams,
    labeled_fraction: float,
    unlabeled_per_episode: int,
    n_trials: int,
    seed: int,
    n_splits: int = 10,
    split_seed_base: int = 1000,
    model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
) -> SemiResult:
    """Semi-supervised protocol over ``n_splits`` labeled/unlabeled splits.

    Within each split and trial, the semi arm and the labeled-only arm see
    the exact same support and query sets; they differ only in the episode
    unlabeled pool, which feeds the task covariance and the neighbor
    constraints but never prototypes or scoring.
    """
    adapted_spec = AblationSpec(False, True, True)
    per_split = []
    semi_all, lab_all = [], []
    for s in range(n_splits):
        split = SemiSplitConfig(labeled_fraction, split_seed=split_seed_base + s)
        seeds = trial_seeds(seed + s, n_trials)
        semi_accs, lab_accs = [], []
        for t in range(n_trials):
            rng = np.random.default_rng(seeds[t])
            episode = sample_semi_episode(
                dataset, episode_cfg, split, unlabeled_per_episode, rng
            )
            semi_accs.append(
                evaluate_episode(episode, hp, adapted_spec, model=model, bank=bank)
            )
            lab_accs.append(
                evaluate_episode(
                    episode.without_unlabeled(), hp, adapted_spec, model=model, bank=bank
                )
            )
        echo = _config_echo(
            episode_cfg, hp, adapted_spec, n_trials, seed,
            extra={
                "labeled_fraction": labeled_fraction,
                "unlabeled_per_episode": unlabeled_per_episode,
                "split_seed": split.split_seed,
            },
        )
        semi_r = _make_report(semi_accs, echo)
        lab_r = _make_report(lab_accs, {**echo, "unlabeled_per_episode": 0})
        per_split.append((split.split_seed, semi_r, lab_r))
        semi_all.extend(semi_accs)
        lab_all.extend(lab_accs)
    overall_echo = _config_echo(
        episode_cfg, hp, adapted_spec, n_trials * n_splits, seed,
        extra={
            "labeled_fraction": labeled_fraction,
            "unlabeled_per_episode": unlabeled_per_episode,
            "n_splits": n_splits,
        },
    )
    return SemiResult(
        per_split=per_split,
        semi_overall=_make_report(semi_all, overall_echo),
        labeled_overall=_make_report(lab_all, {**overall_echo, "unlabeled_per_episode": 0}),
    )


@dataclass
class OracleCheck:
    frobenius_gap: float
    objective_gap: float
    grad_norm_closed: float
    converged: bool


def random_scatter_pair(dim: int, rng: np.random.Generator) -> ScatterPair:
    """A synthetic scatter pair with the PSD structure of real episodes."""
    a = rng.normal(size=(3 * dim, dim))
    b = rng.normal(size=(3 * dim, dim))
    m_tilde = a.T @ a / a.shape[0]
    c_tilde = b.T @ b / b.shape[0]
    return ScatterPair((m_tilde + m_tilde.T) / 2.0, (c_tilde + c_tilde.T) / 2.0)


def run_oracle_check(
    n_instances: int, dim: int, hp: MetricHyperParams, seed: int
) -> list:
    """Compare the closed form against the projected-gradient reference on
    random instances (covariance term off, as the reference solves the
    constraint objective only)."""
    rng = np.random.default_rng(seed)
    hp0 = MetricHyperParams(
        alpha=0.0, gamma=hp.gamma, lam=hp.lam, prior=hp.prior,
        knn_k=hp.knn_k, pd_floor=hp.pd_floor,
    )
    checks = []
    for _ in range(n_instances):
        sp = random_scatter_pair(dim, rng)
        closed = closed_form_metric(sp, None, hp0)
        result = oracle_solve(sp, hp0)
        y = hp0.prior_inverse(dim) + hp0.gamma * sp.m_tilde - hp0.gamma * hp0.lam * sp.c_tilde
        grad_closed = float(np.linalg.norm(y - np.linalg.inv(closed.matrix)))
        checks.append(
            OracleCheck(
                frobenius_gap=float(np.linalg.norm(result.metric.matrix - closed.matrix)),
                objective_gap=abs(
                    metric_objective(result.metric, sp, hp0)
                    - metric_objective(closed, sp, hp0)
                ),
                grad_norm_closed=grad_closed,
                converged=result.converged,
            )
        )
    return checks


def run_sparsity_scan(
    dataset: EmbeddingDataset,
    episode_cfg: EpisodeConfig,
    hp: MetricHyperParams,
    n_episodes: int,
    seed: int,
    model: EmbeddingModel | None = None,
    bank: PrototypeBank | None = None,
):
    """Adapted-metric diagonal-gap statistics over sampled episodes.

    Returns (gap_ratios, reports, last_metric) with non-degenerate gap
    ratios only.
    """
    seeds = trial_seeds(seed, n_episodes)
    gaps, reports = [], []
    last_metric = None
    for s in seeds:
        episode = sample_episode(dataset, episode_cfg, np.random.default_rng(s))
        if model is not None:
            episode = _embedded_episode(model, episode)
        metric = episode_metric(episode, hp, bank=bank)
        rep = sparsity_report(metric)
        reports.append(rep)
        if not rep.degenerate:
            gaps.append(rep.gap_ratio)
        last_metric = metric
    return np.asarray(gaps, dtype=np.float64), reports, last_metric
