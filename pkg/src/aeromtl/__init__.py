"""Quality-adaptive surrogate modeling.

Splits a learning task into labeled subtasks (binning or K-means), then
trains a mixture of per-subtask expert pairs (a regression head gated by a
per-cluster classifier), so scarce regions of a dataset get dedicated
capacity instead of being drowned by the majority.
"""

__version__ = "0.1.0"

from .allocation import (
    Allocation,
    KMeansModel,
    PartitionRule,
    kmeans_allocate,
    kmeans_assign,
    kmeans_fit,
    one_hot,
    one_hot_rows,
    partition_by_dimension,
)
from .clusternet import (
    Cluster,
    ClusterNet,
    ClusterNetOptState,
    LossTrace,
    TrainConfig,
    clusternet_forward,
    clusternet_init,
    context_loss,
    function_loss,
    load_clusternet,
    predict,
    save_clusternet,
    train,
    train_fcn,
    train_step_context,
    train_step_function,
)
from .datasets import (
    CYLINDER_SCHEMA,
    BurgersConfig,
    ColumnTransform,
    NormalizedDataset,
    RawDataset,
    TableSchema,
    burgers_pde_residual,
    generate_burgers,
    load_table,
    normalize_and_split,
    save_table,
    solve_burgers_numerical,
    synthesize_cylinder_table,
    traveling_wave,
)
from .errors import (
    ConfigError,
    DegenerateDimensionError,
    InfeasibleError,
    NumericError,
    ParseError,
    SchemaError,
    TrainingDivergedError,
)
from .evaluation import (
    ActivationTrace,
    MetricsReport,
    RegionMetrics,
    activation_trace,
    compute_metrics,
    dominant_cluster_by_bin,
    export_prediction_grid,
    gate_agreement,
    predict_rows,
)
from .nn import (
    MLP,
    GradientSet,
    OptimizerState,
    backward,
    binary_cross_entropy,
    cross_entropy_loss,
    fd_gradient,
    forward,
    load_mlp,
    mlp_init,
    mse_loss,
    save_mlp,
    sgd_step,
)
