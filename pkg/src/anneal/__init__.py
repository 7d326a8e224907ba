"""Pair-based active learning for metric-space image retrieval.

The package grows a labeled set of similar / dissimilar image pairs by
repeatedly (1) scoring every candidate pair in an unlabeled pool by how
uncertain the current metric model is about it, (2) picking a diverse batch
of the most uncertain pairs for annotation, (3) expanding the new labels
through one step of transitivity, and (4) retraining the metric space.
Competing selection strategies are compared under equal information-bit
budgets, where a pair label costs one bit and a class label costs
log2(num_classes) bits.

Typical flow::

    from anneal import (assign_splits, make_synthetic, ExperimentConfig,
                        run_experiment)

    ds = assign_splits(make_synthetic(num_classes=10, per_class=100,
                                      d0=32, seed=0))
    result = run_experiment(ds, ExperimentConfig(
        strategies=("mgue", "random"), seeds=(0, 1, 2)))
"""

from .core import (
    Dataset,
    DatasetError,
    Item,
    LabeledPair,
    PairKey,
    assign_splits,
    iter_split_pairs,
    load_manifest,
    make_synthetic,
    pairs_to_indices,
    read_features,
    save_manifest,
    write_features,
)
from .evaluation import (
    DEFAULT_K,
    MapResult,
    UndefinedMetricError,
    average_precision,
    map_at_k,
    retrieve,
)
from .loop import (
    ALState,
    CALConfig,
    CALState,
    ExperimentConfig,
    ExperimentResult,
    IterationRecord,
    LoopConfig,
    PairPool,
    PendingIteration,
    RunResult,
    SimulatedClassOracle,
    SimulatedPairOracle,
    aggregate_histories,
    apply_iteration,
    build_pool,
    class_label_bits,
    curve_area,
    derive_seed,
    finalize,
    finalize_cal,
    init_al_state,
    init_cal_state,
    init_training_set,
    items_for_bits,
    prepare_iteration,
    run_cal,
    run_cal_iteration,
    run_experiment,
    run_iteration,
    run_loop,
    run_strategy,
    state_from_doc,
    state_to_doc,
    write_results_jsonl,
    write_summary_json,
)
from .metric import (
    BinaryClassifier,
    ConfigError,
    MetricModel,
    ProjectionHead,
    SoftmaxHead,
    TrainConfig,
    bce_loss,
    class_posteriors,
    combined_loss,
    contrastive_loss,
    cosine_similarity,
    init_metric_model,
    load_checkpoint,
    loss_gradient,
    model_from_doc,
    model_to_doc,
    pack_params,
    project,
    save_checkpoint,
    set_params,
    train,
    train_classifier_head,
)
from .selection import (
    ClusterModel,
    SelectedPair,
    SelectionBatch,
    SelectionExhausted,
    TransitiveReport,
    diversify,
    kmeans,
    pair_representation,
    pair_representations,
    transitive_step,
)
from .uncertainty import (
    DEFAULT_LAMBDA,
    NoThresholdError,
    ScoreTable,
    ThresholdStats,
    bcgue_posteriors,
    bcgue_scores,
    estimate_threshold,
    mgue_scores,
    threshold_from_moments,
    top_p_table,
    top_p_uncertain,
)

__version__ = "0.1.0"

__all__ = [
    "ALState",
    "BinaryClassifier",
    "CALConfig",
    "CALState",
    "ClusterModel",
    "ConfigError",
    "DEFAULT_K",
    "DEFAULT_LAMBDA",
    "Dataset",
    "DatasetError",
    "ExperimentConfig",
    "ExperimentResult",
    "Item",
    "IterationRecord",
    "LabeledPair",
    "LoopConfig",
    "MapResult",
    "MetricModel",
    "NoThresholdError",
    "PairKey",
    "PairPool",
    "PendingIteration",
    "ProjectionHead",
    "RunResult",
    "ScoreTable",
    "SelectedPair",
    "SelectionBatch",
    "SelectionExhausted",
    "SimulatedClassOracle",
    "SimulatedPairOracle",
    "SoftmaxHead",
    "ThresholdStats",
    "TrainConfig",
    "TransitiveReport",
    "UndefinedMetricError",
    "aggregate_histories",
    "apply_iteration",
    "assign_splits",
    "average_precision",
    "bce_loss",
    "bcgue_posteriors",
    "bcgue_scores",
    "build_pool",
    "class_label_bits",
    "class_posteriors",
    "combined_loss",
    "contrastive_loss",
    "cosine_similarity",
    "curve_area",
    "derive_seed",
    "diversify",
    "estimate_threshold",
    "finalize",
    "finalize_cal",
    "init_al_state",
    "init_cal_state",
    "init_metric_model",
    "init_training_set",
    "items_for_bits",
    "iter_split_pairs",
    "kmeans",
    "load_checkpoint",
    "load_manifest",
    "loss_gradient",
    "make_synthetic",
    "map_at_k",
    "mgue_scores",
    "model_from_doc",
    "model_to_doc",
    "pack_params",
    "pair_representation",
    "pair_representations",
    "pairs_to_indices",
    "prepare_iteration",
    "project",
    "read_features",
    "retrieve",
    "run_cal",
    "run_cal_iteration",
    "run_experiment",
    "run_iteration",
    "run_loop",
    "run_strategy",
    "save_checkpoint",
    "save_manifest",
    "set_params",
    "state_from_doc",
    "state_to_doc",
    "threshold_from_moments",
    "top_p_table",
    "top_p_uncertain",
    "train",
    "train_classifier_head",
    "transitive_step",
    "write_features",
    "write_results_jsonl",
    "write_summary_json",
]
