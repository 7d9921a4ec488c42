"""Per-task adaptive Mahalanobis metrics for few-shot classification."""

from .classifier import SimilarityTable, classify, score
from .data import (
    UNLABELED,
    EmbeddingDataset,
    Episode,
    EpisodeConfig,
    MetricHyperParams,
    MetricMatrix,
    PrototypeBank,
    load_embeddings,
    save_embeddings,
)
from .harness import (
    ABLATION_ROWS,
    AblationSpec,
    SemiResult,
    ShotResult,
    TrialReport,
    evaluate_episode,
    run_ablation_suite,
    run_oracle_check,
    run_semi,
    run_shot_sweep,
    run_sparsity_scan,
    run_trials,
)
from .metric import (
    ConstraintSets,
    OracleResult,
    ScatterPair,
    SparsityReport,
    build_constraints,
    closed_form_metric,
    compute_prototypes,
    episode_metric,
    episode_prototypes,
    factor_metric,
    load_metric_block,
    metric_distance,
    metric_objective,
    oracle_solve,
    pair_loss,
    pairwise_distances,
    reg_loss,
    save_metric_block,
    scatter_matrices,
    sparsity_report,
    task_covariance,
)
from .mixing import TimConfig, augment_episode, mix_pair, mixing_active
from .sampler import (
    SemiSplitConfig,
    sample_episode,
    sample_semi_episode,
    split_labeled_unlabeled,
)
from .synth import SynthConfig, aniso16, generate
from .trainer import (
    EmbeddingModel,
    TrainConfig,
    embed,
    episode_loss,
    init_model,
    load_model,
    loss_gradient,
    save_model,
    train,
)

__version__ = "0.1.0"
