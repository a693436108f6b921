"""Block-structured weight pruning with reweighted group-Lasso training.

The package trains a small transformer classifier on a synthetic token
task, drives row or column segment norms toward zero with a reweighted
group penalty, prunes whole segments, retrains under a fixed mask, and
stores the result in a block-structured sparse format.
"""

from .errors import (
    BlockpruneError,
    CheckpointError,
    ConfigError,
    DataError,
    MaskError,
    NonFiniteError,
    PartitionError,
    ShapeError,
)
from .model import (
    ArchConfig,
    Batch,
    ModelParams,
    WeightTensor,
    build_model,
    evaluate,
    forward,
    load_checkpoint,
    loss,
    loss_and_gradients,
    make_synthetic_dataset,
    save_checkpoint,
)
from .pruner import (
    PruneEntry,
    PruneMask,
    PruneSpec,
    compression_rate,
    load_masks,
    prune_model,
    prune_percentile,
    prune_threshold,
    save_masks,
)
from .regularizer import (
    BlockPartition,
    GammaWeights,
    gamma_update,
    group_norms,
    make_partition,
    penalty,
    penalty_grad,
)
from .sparse import (
    BlockStructuredMatrix,
    CooMatrix,
    StorageReport,
    WholeBlockMatrix,
    load_block_structured,
    save_block_structured,
    spmm,
    storage_cost,
    to_block_structured,
    to_coo,
)
from .trainer import (
    PipelineResult,
    RunReport,
    TrainConfig,
    plain_train,
    retrain,
    reweighted_train,
    run_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "Batch",
    "BlockPartition",
    "BlockStructuredMatrix",
    "BlockpruneError",
    "CheckpointError",
    "ConfigError",
    "CooMatrix",
    "DataError",
    "GammaWeights",
    "MaskError",
    "ModelParams",
    "NonFiniteError",
    "PartitionError",
    "PipelineResult",
    "PruneEntry",
    "PruneMask",
    "PruneSpec",
    "RunReport",
    "ShapeError",
    "StorageReport",
    "TrainConfig",
    "WeightTensor",
    "WholeBlockMatrix",
    "build_model",
    "compression_rate",
    "evaluate",
    "forward",
    "gamma_update",
    "group_norms",
    "load_block_structured",
    "load_checkpoint",
    "load_masks",
    "loss",
    "loss_and_gradients",
    "make_partition",
    "make_synthetic_dataset",
    "penalty",
    "penalty_grad",
    "plain_train",
    "prune_model",
    "prune_percentile",
    "prune_threshold",
    "retrain",
    "reweighted_train",
    "run_pipeline",
    "save_block_structured",
    "save_checkpoint",
    "save_masks",
    "spmm",
    "storage_cost",
    "to_block_structured",
    "to_coo",
    "__version__",
]
