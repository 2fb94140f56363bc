"""Distribution-aware federated learning simulator.

Thin wrapper around the C++ core: BatchNorm-statistics knowledge
extraction, KL-divergence clustering of client models, per-cluster
aggregation, and the scenario/attack generators used to exercise them.
"""

from ._core import (
    Model,
    Shard,
    accuracy,
    adjusted_rand_index,
    build_sim,
    cluster_aggregate,
    cluster_recovery,
    eval_probs,
    generate_scenario,
    gradcheck,
    make_mlp_bn,
    model_from_json,
    pre_aggregate,
    run_experiment,
    select_channels,
    synthesize,
    threshold_cluster,
    train_local,
    weight_divergence,
)

__all__ = [
    "Model",
    "Shard",
    "accuracy",
    "adjusted_rand_index",
    "build_sim",
    "cluster_aggregate",
    "cluster_recovery",
    "eval_probs",
    "generate_scenario",
    "gradcheck",
    "make_mlp_bn",
    "model_from_json",
    "pre_aggregate",
    "run_experiment",
    "select_channels",
    "synthesize",
    "threshold_cluster",
    "train_local",
    "weight_divergence",
]

__version__ = "0.1.0"
