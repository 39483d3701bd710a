"""Small-object point-cloud tracker: differentiable engine, geometry,
synthetic benchmarks, tracker network, training, and one-pass evaluation."""

from .autograd import Tensor, ShapeError, grad_check
from .geometry import Box3D, chamfer_distance, farthest_point_sample, rotated_iou_3d
from .data import Frame, Sequence, SyntheticSpec, TrainingSample, generate_synthetic, scale_sequence
from .model import Tracker, TrackerConfig
from .training import TrainConfig, train
from .evaluation import TrackReport, precision_auc, success_auc, track_sequence

__all__ = [
    "Tensor", "ShapeError", "grad_check",
    "Box3D", "chamfer_distance", "farthest_point_sample", "rotated_iou_3d",
    "Frame", "Sequence", "SyntheticSpec", "TrainingSample",
    "generate_synthetic", "scale_sequence",
    "Tracker", "TrackerConfig", "TrainConfig", "train",
    "TrackReport", "precision_auc", "success_auc", "track_sequence",
]
