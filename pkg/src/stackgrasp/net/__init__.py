"""Desk-scale multi-task network: detector, grasp head and relation head over fused features."""

from .config import ConfigError, ModelConfig, dump_config, load_config, paper_config, parse_config
from .infer import InferenceResult, assign_grasps, detect_objects, infer_scene, predict_scene, prediction_from_pairs, relation_forward, training_fit
from .losses import LossBreakdown, detection_loss, grasp_loss, relation_loss, total_loss
from .model import init_params, msfa_param_count
from .targets import angle_bin, assign_det_targets, assign_grasp_targets, bin_center, decode_detections, decode_grasps
from .train import DataError, TrainLog, train_stage1, train_stage2

__all__ = [
    "ConfigError",
    "DataError",
    "InferenceResult",
    "LossBreakdown",
    "ModelConfig",
    "TrainLog",
    "angle_bin",
    "assign_det_targets",
    "assign_grasp_targets",
    "assign_grasps",
    "bin_center",
    "decode_detections",
    "decode_grasps",
    "detect_objects",
    "detection_loss",
    "dump_config",
    "grasp_loss",
    "infer_scene",
    "init_params",
    "load_config",
    "msfa_param_count",
    "paper_config",
    "parse_config",
    "predict_scene",
    "prediction_from_pairs",
    "relation_forward",
    "relation_loss",
    "total_loss",
    "train_stage1",
    "train_stage2",
    "training_fit",
]
