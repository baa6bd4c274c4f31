"""Cluster-sparse attention library and benchmark harness."""

from .clustering import (
    ClusterModel,
    CompactnessReport,
    cluster_queries,
    compactness,
    compute_tau,
    kmeans,
    multi_stage_cluster_keys,
    warm_start_update,
)
from .errors import (
    AdaClusterError,
    ContractError,
    DimensionError,
    FormatError,
    ParameterError,
    ValidationError,
)
from .npyio import read_npy, write_npy
from .pipeline import (
    DenoiseResult,
    LayerPolicy,
    PipelineParams,
    StepState,
    adacluster_attention,
    count_flops,
    run_denoise_steps,
)
from .quest import (
    ClusterEnvelope,
    SelectionResult,
    build_envelopes,
    mean_center_scores,
    quest_scalar,
    select_topk_clusters,
    tensor_quest,
)
from .reference import ErrorMetrics, compare_outputs, exact_topk_keys, full_attention
from .tensorops import l2_normalize_rows, matmul, row_softmax

__version__ = "0.1.0"
