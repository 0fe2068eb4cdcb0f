"""Probabilistic pixel-adaptive convolutions and refinement networks.

A numpy/scipy implementation of content- and confidence-adaptive
filtering: convolutions whose taps are modulated per pixel by feature
similarity and per neighbor by confidence, with learned weights, manual
backpropagation, three small refinement architectures, Adam training,
synthetic data, metrics, and file formats.
"""

from .tensor import Tensor, zero_pad, center_crop, resample, random_crop_pair
from .adaptive_conv import (
    NormalizationMode, AdaptiveKernelParams, AdaptiveConvConfig,
    ForwardCache, ConvGradients, rbf_kernel, kernel_tensor,
    adaptive_conv_forward, adaptive_conv_backward, default_epsilon_denom,
)
from .optim import Parameter, ParamStore, MissingGradient, adam_step, LrSchedule
from .gradcheck import (GradCheckReport, check_gradients, check_adaptive_conv,
                        check_network)
from .networks import (RefinementNet, NetInputs, build_net, parameter_count,
                       oracle_confidence, StandardConvLayer, AdaptiveConvLayer)
from .datagen import SceneSpec, SyntheticScene, generate_scene, generate_dataset
from .metrics import MetricReport, eval_flow, eval_segmentation, boundary_band
from .training import (TrainResult, TrainingDiverged, aee_loss,
                       cross_entropy_loss, train_epochs, evaluate_scenes,
                       evaluate_unrefined, refine_scene, scene_inputs)
from .config import RunConfig, ConfigError, parse_config, load_config
from . import fileio

__version__ = "0.1.0"

__all__ = [
    "Tensor", "zero_pad", "center_crop", "resample", "random_crop_pair",
    "NormalizationMode", "AdaptiveKernelParams", "AdaptiveConvConfig",
    "ForwardCache", "ConvGradients", "rbf_kernel", "kernel_tensor",
    "adaptive_conv_forward", "adaptive_conv_backward", "default_epsilon_denom",
    "Parameter", "ParamStore", "MissingGradient", "adam_step", "LrSchedule",
    "GradCheckReport", "check_gradients", "check_adaptive_conv", "check_network",
    "RefinementNet", "NetInputs", "build_net", "parameter_count",
    "oracle_confidence", "StandardConvLayer", "AdaptiveConvLayer",
    "SceneSpec", "SyntheticScene", "generate_scene", "generate_dataset",
    "MetricReport", "eval_flow", "eval_segmentation", "boundary_band",
    "TrainResult", "TrainingDiverged", "aee_loss", "cross_entropy_loss",
    "train_epochs", "evaluate_scenes", "evaluate_unrefined", "refine_scene",
    "scene_inputs",
    "RunConfig", "ConfigError", "parse_config", "load_config",
    "fileio",
]
