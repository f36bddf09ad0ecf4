"""Single-image organ shape reconstruction on a synthetic phantom.

A statistical shape model renders simulated contour images and
pseudo-real camera-style images; a VAE translates both domains into a
common synthetic image; a CNN regresses the deformation weight and
camera parameters with a projected-vertex alignment loss.
"""

from .camera import CameraParams, Intrinsics
from .dataset import (
    Dataset,
    ParamRanges,
    ParamVector,
    build_dataset,
    default_ranges,
    load_dataset,
    normalize_params,
    sample_parameters,
    save_dataset,
)
from .evaluate import (
    BenchmarkConfig,
    EvalReport,
    anova_oneway,
    compare_conditions,
    cross_validate,
    mae_metric,
)
from .geometry import PhantomConfig, ShapeModel, SurfaceMesh, deform, make_phantom
from .regressor import (
    RegressorHyper,
    build_regressor,
    loss_parameter,
    loss_reconstruction,
    loss_total,
    predict_params,
    train_regressor,
)
from .render import PerturbConfig, contour_extract, rasterize_mask, render_pseudo_real
from .vae import VaeHyper, build_vae, encode, kld, train_translator, translate, vae_loss

__version__ = "0.1.0"
