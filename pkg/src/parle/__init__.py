"""Replica-consensus optimization toolkit.

Implements and cross-validates a family of consensus training
algorithms (SGD, Entropy-SGD, Elastic-SGD, Parle, sheriff/deputies)
over pluggable loss oracles, with a simulated parameter server that
accounts for every float exchanged.
"""

__version__ = "0.1.0"

from .alignment import (
    LayerPermutation,
    apply_permutation,
    average_aligned,
    exhaustive_align,
    greedy_align,
    overlap,
)
from .datasets import (
    BatchSampler,
    Dataset,
    ShardPlan,
    load_csv,
    load_idx,
    make_blobs,
    make_digits,
    save_idx,
    shard,
    split_train_val,
)
from .errors import (
    ConfigError,
    ConsistencyError,
    DataFormatError,
    DimensionMismatch,
    DivergenceError,
    InvalidHyperparameter,
    NonFiniteError,
    ParleError,
    UndefinedSimilarity,
)
from .harness import (
    EquivalenceStats,
    EpochRow,
    RunConfig,
    RunRecord,
    collapse_metric,
    comm_ratio,
    equivalence_trial,
    make_config,
    run_experiment,
)
from .ledger import CommLedger, RunMeta
from .optimizers import (
    DeputyState,
    ReplicaState,
    ServerState,
    elastic_sgd_step,
    entropy_sgd_cycle,
    make_deputies,
    parle_round,
    sgd_epoch,
    sheriff_round,
)
from .oracles import (
    LossOracle,
    MlpOracle,
    NoisyQuadraticOracle,
    QuadraticOracle,
    central_difference_grad,
)
from .params import FlatParams, nesterov_step, vec_avg
from .persist import load_model, save_model
from .rng import Rng
from .schedule import HyperParams, gamma_at, rho_at, scoping_value

__all__ = [
    "BatchSampler", "CommLedger", "ConfigError", "ConsistencyError",
    "DataFormatError", "Dataset", "DeputyState", "DimensionMismatch",
    "DivergenceError", "EpochRow", "EquivalenceStats", "FlatParams",
    "HyperParams", "InvalidHyperparameter", "LayerPermutation", "LossOracle",
    "MlpOracle", "NoisyQuadraticOracle", "NonFiniteError", "ParleError",
    "QuadraticOracle", "ReplicaState", "RunConfig", "RunMeta", "RunRecord",
    "Rng", "ServerState", "ShardPlan", "UndefinedSimilarity",
    "apply_permutation", "average_aligned", "central_difference_grad",
    "collapse_metric", "comm_ratio", "elastic_sgd_step", "entropy_sgd_cycle",
    "equivalence_trial", "exhaustive_align", "gamma_at", "greedy_align",
    "load_csv", "load_idx", "load_model", "make_blobs", "make_config",
    "make_deputies", "make_digits", "nesterov_step", "overlap", "parle_round",
    "rho_at", "run_experiment", "save_idx", "save_model", "scoping_value",
    "sgd_epoch", "shard", "sheriff_round", "split_train_val", "vec_avg",
]
