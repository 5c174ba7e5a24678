"""Region-scheduled diffusion sampling on latent grids.

The package segments the evolving latent into spatially coherent regions,
scores them by detail complexity, and spends each step's denoiser budget
on the regions that need it, advancing the rest by Newton extrapolation
of their velocity history.  Analytic oracle denoisers make every piece
testable in closed form.
"""

from .complexity import (
    SCORE_VARIANTS,
    ComplexityMap,
    ComplexityWeights,
    RegionScores,
    complexity_map,
    region_scores,
    score_map_variant,
    select_regions,
)
from .config import (
    DENOISERS,
    METHODS,
    RunConfig,
    ScheduleSpec,
    SweepSpec,
    load_config,
    parse_config,
    resolved_dict,
)
from .core import BitMask, LatentGrid, RegionMap, SigmaSchedule, grid_stats, make_schedule
from .errors import (
    ConfigError,
    FormatError,
    HistoryError,
    ManifestError,
    NumericError,
    ParameterError,
    RegionSchedError,
    ScheduleError,
)
from .metrics import mse, psnr, ssim
from .oracle import (
    DeltaDenoiser,
    GmmDenoiser,
    GmmPixelPrior,
    SceneSpec,
    counter_normals,
    forward_noise,
    make_default_prior,
    make_scene,
    scene_edge_mask,
)
from .partition import (
    DensityField,
    FeatureField,
    QuickshiftParams,
    QuickshiftSettings,
    build_feature_field,
    default_quickshift_params,
    dilate_mask,
    enforce_min_region_size,
    estimate_density,
    kmeans_partition,
    quickshift_segment,
    uniform_partition,
)
from .sampler import (
    RunReport,
    SamplerConfig,
    ScheduleEngine,
    StepRecord,
    compute_ratio,
    full_sample,
    ras_like_sample,
    sdit_sample,
    segment_latent,
)
from .ssd import RefreshPolicy, SsdParams, StepPlan, dense_step, plan_step, ssd_ratio
from .tensor_io import (
    ReplayResult,
    ReplayRow,
    TraceRecorder,
    TraceStep,
    load_trace,
    read_array,
    replay_schedule,
    write_array,
    write_pgm,
    write_ppm,
    write_rsgrid,
)
from .velocity import (
    ExtrapolationParams,
    PixelHistory,
    extrapolate_grid,
    newton_extrapolate,
    push_history,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core types
    "LatentGrid",
    "BitMask",
    "RegionMap",
    "SigmaSchedule",
    "make_schedule",
    "grid_stats",
    # errors
    "RegionSchedError",
    "ParameterError",
    "ScheduleError",
    "ConfigError",
    "HistoryError",
    "NumericError",
    "FormatError",
    "ManifestError",
    # oracles
    "SceneSpec",
    "GmmPixelPrior",
    "DeltaDenoiser",
    "GmmDenoiser",
    "make_scene",
    "scene_edge_mask",
    "make_default_prior",
    "forward_noise",
    "counter_normals",
    # partitioning
    "FeatureField",
    "DensityField",
    "QuickshiftParams",
    "QuickshiftSettings",
    "build_feature_field",
    "default_quickshift_params",
    "estimate_density",
    "quickshift_segment",
    "uniform_partition",
    "kmeans_partition",
    "enforce_min_region_size",
    "dilate_mask",
    # complexity
    "ComplexityMap",
    "ComplexityWeights",
    "RegionScores",
    "SCORE_VARIANTS",
    "complexity_map",
    "score_map_variant",
    "region_scores",
    "select_regions",
    # scheduling
    "SsdParams",
    "RefreshPolicy",
    "StepPlan",
    "ssd_ratio",
    "dense_step",
    "plan_step",
    # velocity
    "ExtrapolationParams",
    "PixelHistory",
    "newton_extrapolate",
    "push_history",
    "extrapolate_grid",
    # sampling
    "SamplerConfig",
    "ScheduleEngine",
    "StepRecord",
    "RunReport",
    "full_sample",
    "sdit_sample",
    "ras_like_sample",
    "segment_latent",
    "compute_ratio",
    # metrics
    "mse",
    "psnr",
    "ssim",
    # io
    "write_array",
    "read_array",
    "write_rsgrid",
    "write_pgm",
    "write_ppm",
    "TraceStep",
    "TraceRecorder",
    "load_trace",
    "ReplayRow",
    "ReplayResult",
    "replay_schedule",
    # config
    "METHODS",
    "DENOISERS",
    "RunConfig",
    "ScheduleSpec",
    "SweepSpec",
    "parse_config",
    "load_config",
    "resolved_dict",
]
