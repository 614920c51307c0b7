"""Parallel multi-scale incremental prediction for 3D human motion.

Frame differences at several sampling intervals are fused into per-interval
increments, each learned by a small recurrent branch, attenuated, applied on
top of the latest observed segment, and blended across intervals.  Long
horizons chain the short-term predictor autoregressively.
"""

from .dataio import (
    MotionSequence,
    NormStats,
    SynthSpec,
    UnitWindow,
    compute_norm_stats,
    denormalize,
    make_windows,
    normalize_action,
    parse_mtf,
    synth_generate,
    write_mtf,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    LoadError,
    NonFiniteError,
    NumericError,
    ParseError,
    PmsError,
    ShapeError,
)
from .increments import (
    FusionWeights,
    ScaleConfig,
    accel_diffs,
    fuse_accel,
    fuse_velocity,
    segment,
    velocity_diffs,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    loss_current,
    loss_future,
    loss_past,
    loss_total,
    mpjpe,
)
from .model import (
    ModelConfig,
    PmsModel,
    Prediction,
    build_model,
    gamma_schedule,
    load_model,
    predict_long,
    predict_long_batch,
    predict_short,
    predict_short_batch,
    save_model,
)
from .training import (
    ABLATION_VARIANTS,
    EvalReport,
    Stage,
    StagePlan,
    TrainSettings,
    apply_ablation,
    evaluate_model,
    run_stage,
    train_actions,
    train_multistage,
)

__version__ = "0.1.0"

__all__ = [
    "MotionSequence",
    "NormStats",
    "SynthSpec",
    "UnitWindow",
    "compute_norm_stats",
    "denormalize",
    "make_windows",
    "normalize_action",
    "parse_mtf",
    "synth_generate",
    "write_mtf",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "LoadError",
    "NonFiniteError",
    "NumericError",
    "ParseError",
    "PmsError",
    "ShapeError",
    "FusionWeights",
    "ScaleConfig",
    "accel_diffs",
    "fuse_accel",
    "fuse_velocity",
    "segment",
    "velocity_diffs",
    "LossBreakdown",
    "LossConfig",
    "loss_current",
    "loss_future",
    "loss_past",
    "loss_total",
    "mpjpe",
    "ModelConfig",
    "PmsModel",
    "Prediction",
    "build_model",
    "gamma_schedule",
    "load_model",
    "predict_long",
    "predict_long_batch",
    "predict_short",
    "predict_short_batch",
    "save_model",
    "ABLATION_VARIANTS",
    "EvalReport",
    "Stage",
    "StagePlan",
    "TrainSettings",
    "apply_ablation",
    "evaluate_model",
    "run_stage",
    "train_actions",
    "train_multistage",
    "__version__",
]
