"""Multi-layer convolutional sparse coding: inference, unrolled learning and
measurement models for inpainting, JPEG artifact removal and trajectory
reconstruction."""

from .conv import ConvDictionary, ShapeError, conv_analysis, conv_synthesis
from .estimator import MLCSCRegressor
from .linop import LinearOperator
from .metrics import MetricReport, nrmse, rmse_psnr, ssim
from .solver import ModelParams, NumericalError, SolverState, infer, predict
from .unroll import TrainConfig, init_params, param_gradients_unrolled, train

__version__ = "0.1.0"

__all__ = [
    "ConvDictionary",
    "ShapeError",
    "conv_analysis",
    "conv_synthesis",
    "MLCSCRegressor",
    "LinearOperator",
    "MetricReport",
    "nrmse",
    "rmse_psnr",
    "ssim",
    "ModelParams",
    "NumericalError",
    "SolverState",
    "infer",
    "predict",
    "TrainConfig",
    "init_params",
    "param_gradients_unrolled",
    "train",
]
