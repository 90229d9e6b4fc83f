"""semshape: linear semantic shape models and 9-DoF pose recovery.

Learns per-category point-cloud shape models (prototype + deformation
basis), completes noisy partial observations into full semantic shapes,
and recovers rotation, translation and metric size by matching per-point
descriptors between an observation and its reconstruction.
"""

from .backend import BACKEND, NUMBA_AVAILABLE
from .cloud import (
    Pose,
    SemanticCloud,
    SimilarityTransform,
    Space,
    Symmetry,
)
from .config import (
    DatasetConfig,
    EvalConfig,
    RunConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
)
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EmptyCloudError,
    FormatError,
    NoInliersError,
    NumericalError,
    SemShapeError,
    SpaceMismatchError,
    TooSparseError,
)
from .evalmetrics import (
    METRIC_THRESHOLDS,
    MetricReport,
    SceneRecord,
    build_report,
    iou3d,
    ndeg_mcm_map,
    nocs_error_map,
    pose_error,
    recon_table,
    write_metric_svg,
    write_report_csv,
    write_report_json,
)
from .geometry import (
    TAU1,
    TAU2,
    chamfer_distance,
    diversity_penalty,
    farthest_point_sample,
    kmeanspp_init,
    knn,
    object_aware_chamfer,
    object_aware_filter,
    umeyama_solve,
)
from .io import load_cloud, read_feat, read_ply, save_cloud, write_feat, write_ply
from .posesolver import (
    CorrespondenceSet,
    EstimateResult,
    PoseSolution,
    SolverConfig,
    estimate,
    match_semantic,
    select_keypoints,
    solve_pose,
)
from .semantics import (
    K_AGG,
    DescriptorCloud,
    DescriptorSource,
    aggregate_instance_features,
    build_semantic_prototype,
    export_feature_pca,
    pooled_pca_projection,
)
from .shapemodel import (
    LinearShapeModel,
    PartialFit,
    ShapeParams,
    TrainConfig,
    TrainResult,
    augment_partial,
    fit_partial,
    load_model,
    save_model,
    synthesize,
    train_category_model,
    transfer_semantics,
)
from .synthgen import (
    CategoryDataset,
    CategorySpec,
    Family,
    RenderedScene,
    SceneSpec,
    generate_category,
    normalize_points,
    random_pose,
    render_partial,
)

__version__ = "0.1.0"
