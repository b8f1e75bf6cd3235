"""Consistent multi-image feature matching, centralized and distributed."""

from .core import (
    Clustering,
    DensityTree,
    FeatureId,
    FeatureSet,
    InputError,
    ParseError,
    ProtocolError,
    ValidationError,
    canonical_cluster_bytes,
    distance,
    load_clustering,
    load_features,
    save_clustering,
    save_features,
    validate_clustering,
)
from .centralized import (
    Distinctiveness,
    MatchParams,
    break_and_merge,
    build_tree,
    compute_density,
    compute_distinctiveness,
    quickmatch,
)
from .distributed import (
    AgentState,
    DistributedRun,
    NetworkLedger,
    TransferMessage,
    detect_contested,
    distributed_quickmatch,
    exchange_boundary_scalars,
    finalize,
    local_cluster,
    quadratic_kernel,
    route_features,
    transfer_round,
)
from .kernels import Kernel
from .metrics import (
    ClusterComparison,
    PRCurve,
    SplitReport,
    baseline_ratio_match,
    compare_clusterings,
    match_counts_vs_reference,
    pr_curve,
    split_quality,
)
from .partition import (
    BoundaryDistance,
    Partition,
    boundary_distance,
    kmeans_seeds,
    min_boundary_distance,
    random_seeds,
)
from .synthetic import SynthConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "BoundaryDistance",
    "ClusterComparison",
    "Clustering",
    "DensityTree",
    "Distinctiveness",
    "DistributedRun",
    "FeatureId",
    "FeatureSet",
    "InputError",
    "Kernel",
    "MatchParams",
    "NetworkLedger",
    "PRCurve",
    "ParseError",
    "Partition",
    "ProtocolError",
    "SplitReport",
    "SynthConfig",
    "TransferMessage",
    "ValidationError",
    "baseline_ratio_match",
    "boundary_distance",
    "break_and_merge",
    "build_tree",
    "canonical_cluster_bytes",
    "compare_clusterings",
    "compute_density",
    "compute_distinctiveness",
    "detect_contested",
    "distance",
    "distributed_quickmatch",
    "exchange_boundary_scalars",
    "finalize",
    "generate_synthetic",
    "kmeans_seeds",
    "load_clustering",
    "load_features",
    "local_cluster",
    "match_counts_vs_reference",
    "min_boundary_distance",
    "pr_curve",
    "quadratic_kernel",
    "quickmatch",
    "random_seeds",
    "route_features",
    "save_clustering",
    "save_features",
    "split_quality",
    "transfer_round",
    "validate_clustering",
]
