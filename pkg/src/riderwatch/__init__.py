"""Counting motorcycle triple-riding and helmet violations from detection streams."""
from .association import AssociationMode, assign_headgear, assign_riders, extract_roi, flag_triple, group_riders
from .config import EngineConfig, load_config, parse_config
from .dense_net import DenseNet, TrainConfig, load_checkpoint, save_checkpoint, train
from .evaluation import (count_accuracy, evaluate, evaluate_modes, match_violations, missing_rider_rate,
                         prf)
from .geometry import Rect, Trapezium, centroid, clip_polygon, rect_iou, signed_area, trap_rect_iou
from .pipeline import ViolationEngine, ViolationReport, emit_overlay, process_video
from .records import Detection, FrameRecord, read_records, write_records
from .regressors import (AmodalRegressor, EnclosingTrapeziumModel, TrapeziumParams, TrapeziumRegressor,
                         amodal_fill, fit_params, predict_trapezium, reconstruct)
from .synth import SceneConfig, generate, generate_corpus, min_area_trapezium
from .tracker import Tracker, TrackerConfig, hungarian

__version__ = "0.1.0"

__all__ = [
    "AmodalRegressor", "AssociationMode", "DenseNet", "Detection", "EnclosingTrapeziumModel",
    "EngineConfig", "FrameRecord", "Rect", "SceneConfig", "TrainConfig", "Tracker", "TrackerConfig",
    "Trapezium", "TrapeziumParams", "TrapeziumRegressor", "ViolationEngine", "ViolationReport",
    "amodal_fill", "assign_headgear", "assign_riders", "centroid", "clip_polygon", "count_accuracy",
    "emit_overlay", "evaluate", "evaluate_modes", "extract_roi", "fit_params", "flag_triple",
    "generate", "generate_corpus", "group_riders", "hungarian", "load_checkpoint", "load_config",
    "match_violations", "min_area_trapezium", "missing_rider_rate", "parse_config", "predict_trapezium",
    "prf", "process_video", "read_records", "reconstruct", "rect_iou", "save_checkpoint", "signed_area",
    "train", "trap_rect_iou", "write_records",
]
