"""paramcrop: differentiable 3D cubic cropping with adversarial dynamics.

The package simulates, at desk scale, a tug-of-war between a contrastive
video encoder and two learned crop-placement generators that receive the
reversed loss gradient.  All gradients are derived by hand and verified
against finite differences; all runs are bit-reproducible from a seed.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .affine import (
    AffineParams,
    ParamBounds,
    apply_early_stop,
    build_affine_matrix,
    clamp_params,
    clamp_params_backward,
    generate_grid,
    transform_grid,
    transform_grid_backward,
)
from .contrastive import (
    LossConfig,
    ToyEncoder,
    cosine_matrix,
    encode,
    encode_backward,
    nt_xent,
    nt_xent_backward,
)
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    NumericsError,
    ParamCropError,
    TensorFileError,
    TrainingError,
    UnsupportedMetricError,
)
from .gradcheck import CheckResult, render_report, run_all
from .paramgen import (
    CropperState,
    SgdMomentum,
    load_checkpoint,
    mlp_backward,
    mlp_forward,
    reverse_gradient,
    sample_noise,
    save_checkpoint,
    update_weights,
)
from .sampler import sample, sample_backward
from .simulator import (
    CropCube,
    MetricsRecord,
    RunResult,
    TrainConfig,
    baseline_params,
    center_manhattan,
    crop_cube,
    make_synthetic_batch,
    render_csv,
    run_training,
    st_iou,
)

__all__ = [
    "__version__",
    "AffineParams", "ParamBounds", "apply_early_stop", "build_affine_matrix",
    "clamp_params", "clamp_params_backward", "generate_grid",
    "transform_grid", "transform_grid_backward",
    "LossConfig", "ToyEncoder", "cosine_matrix", "encode", "encode_backward",
    "nt_xent", "nt_xent_backward",
    "ParamCropError", "ConfigError", "ContractError", "DimensionError",
    "NumericsError", "TensorFileError", "TrainingError",
    "UnsupportedMetricError",
    "CheckResult", "render_report", "run_all",
    "CropperState", "SgdMomentum", "load_checkpoint", "mlp_backward",
    "mlp_forward", "reverse_gradient", "sample_noise", "save_checkpoint",
    "update_weights",
    "sample", "sample_backward",
    "CropCube", "MetricsRecord", "RunResult", "TrainConfig",
    "baseline_params", "center_manhattan", "crop_cube",
    "make_synthetic_batch", "render_csv", "run_training", "st_iou",
]
