"""Context-adaptive networks from weight-space Bezier curves and planes."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, finite_diff_check
from .context import (
    CorruptionSpec,
    RiskProfile,
    ShiftSpec,
    alpha,
    class_distribution,
    corrupt,
    sample_contextual_batch,
    weighted_ce_loss,
)
from .curve import CurveModel, bmc_step, curve_grad_route, curve_point, midpoint_curve, sample_model
from .data import Dataset, augment, load_idx, normalize, synth_blobs
from .models import ModelSpec, Network, ParamVector, build_model, count_params, forward, mlp_spec
from .planar import PlanarModel, planar_eval_grid, planar_train, planar_train_epoch, planar_weights
from .training import OptimizerState, TrainConfig, bmc_lr, cosine_lr, pretrain_endpoint, sgd_step, train_bmc
