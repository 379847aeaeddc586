from .augment import AugmentParams, apply_augment, augment, eval_transform, sample_params
from .sceneio import ParseError, ValidationError, dumps_scene, load_scene, loads_scene, save_scene
from .synth import RetryExhausted, SynthConfig, synth_dataset, synth_generate, synth_series
from .vmrd import ImportReport, import_vmrd

__all__ = [
    "AugmentParams",
    "ImportReport",
    "ParseError",
    "RetryExhausted",
    "SynthConfig",
    "ValidationError",
    "apply_augment",
    "augment",
    "dumps_scene",
    "eval_transform",
    "import_vmrd",
    "load_scene",
    "loads_scene",
    "sample_params",
    "save_scene",
    "synth_dataset",
    "synth_generate",
    "synth_series",
]
