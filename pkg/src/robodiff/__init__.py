"""Pose- and mask-conditioned diffusion for robot video frames that retain shape and location."""

__version__ = "0.1.0"

from .backbone import VARIANTS, BlockConfig, Denoiser, build_network, network_backward, network_forward
from .dataset import DatasetRecord, SceneSpec, build_record, gen_trajectory, load_dataset, make_scene
from .embeddings import PoseDelta
from .estimator import ShapeRetentionDiffusion
from .metrics import MetricsReport, evaluate_sequence, hu_distance, hu_moments, iou, ssim
from .schedule import VarianceSchedule, forward_sample, make_schedule, reverse_step

__all__ = [
    "VARIANTS", "BlockConfig", "Denoiser", "build_network", "network_forward", "network_backward",
    "DatasetRecord", "SceneSpec", "build_record", "gen_trajectory", "load_dataset", "make_scene",
    "PoseDelta", "ShapeRetentionDiffusion", "MetricsReport", "evaluate_sequence", "hu_distance",
    "hu_moments", "iou", "ssim", "VarianceSchedule", "forward_sample", "make_schedule", "reverse_step",
]
