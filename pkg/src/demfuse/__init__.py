"""demfuse: fuse coregistered raster DEMs and evaluate the result.

The package fuses two or more height grids into a single, more accurate
one, either by per-pixel baselines (median, inverse-variance weighted
average) or by edge-preserving convex variational models solved with a
primal-dual method, and ships the matching quality metrics, parameter
tuning, synthetic benchmark scenes, and a CLI (``demfuse``).
"""

from .baseline import fuse_median, fuse_weighted_average
from .errors import (
    CoregistrationError,
    DegenerateRangeError,
    DemFuseError,
    GridCompatibilityError,
    RasterParseError,
    SolverDivergedError,
)
from .fusion import (
    DEFAULT_GAMMA,
    HuberFusion,
    MedianFusion,
    TVL1Fusion,
    WeightedAverageFusion,
    validate_dem_stack,
)
from .quality import (
    QualityReport,
    accuracy_bands,
    compute_metrics,
    evaluate,
    pu_census,
    pu_threshold,
    residual_grid,
)
from .raster import (
    DemGrid,
    NormalizationContext,
    coregister_shift,
    denormalize,
    joint_normalize,
    read_grid,
    translate_grid,
    write_grid,
)
from .synth import SceneSpec, generate_scene, preset
from .tuning import lcurve_select_gamma
from .variational import (
    FusionConfig,
    SolverState,
    divergence,
    energy_huber,
    energy_tv_l1,
    gradient,
    huber_value,
    operator_norm_sq,
    prox_data_huber,
    prox_data_l1,
    prox_dual_huber,
    prox_dual_tv,
    solve_primal_dual,
)
from .weights import (
    HeightErrorMap,
    WeightMap,
    sigma_from_phase_error,
    weights_from_hem,
)

__version__ = "0.1.0"

__all__ = [
    "CoregistrationError",
    "DEFAULT_GAMMA",
    "DegenerateRangeError",
    "DemFuseError",
    "DemGrid",
    "FusionConfig",
    "GridCompatibilityError",
    "HeightErrorMap",
    "HuberFusion",
    "MedianFusion",
    "NormalizationContext",
    "QualityReport",
    "RasterParseError",
    "SceneSpec",
    "SolverDivergedError",
    "SolverState",
    "TVL1Fusion",
    "WeightMap",
    "WeightedAverageFusion",
    "accuracy_bands",
    "compute_metrics",
    "coregister_shift",
    "denormalize",
    "divergence",
    "energy_huber",
    "energy_tv_l1",
    "evaluate",
    "fuse_median",
    "fuse_weighted_average",
    "generate_scene",
    "gradient",
    "huber_value",
    "joint_normalize",
    "lcurve_select_gamma",
    "operator_norm_sq",
    "preset",
    "prox_data_huber",
    "prox_data_l1",
    "prox_dual_huber",
    "prox_dual_tv",
    "pu_census",
    "pu_threshold",
    "read_grid",
    "residual_grid",
    "sigma_from_phase_error",
    "solve_primal_dual",
    "translate_grid",
    "validate_dem_stack",
    "weights_from_hem",
    "write_grid",
]
