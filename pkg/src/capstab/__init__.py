"""capstab: 1D capsule network vs CNN robustness benchmark.

Trains a dynamic-routing capsule network and a trunk-matched CNN baseline on
heartbeat-style time series, then measures robustness under stochastic
sensor-fault attacks (offset, drift, lag) and the single-step gradient-sign
adversarial attack.
"""

__version__ = "0.1.0"

from .attacks import (
    AttackedSample,
    Drift,
    Fgsm,
    Lag,
    NoiseMoveParams,
    Offset,
    default_attack_specs,
    fgsm_attack,
    generate_attack_set,
    noise_move_path,
)
from .capsnet import CapsNetConfig, CapsNetModel, dynamic_routing, margin_loss, squash
from .checkpoint import load_model, save_model
from .cnn import CnnConfig, CnnModel, cross_entropy_loss
from .data import Beat, Dataset, load_csv, save_csv, split, synth_dataset
from .errors import CapstabError, DataError, NumericError, ShapeError, UsageError
from .harness import (
    EvalReport,
    TrainConfig,
    accuracy,
    evaluate_matrix,
    f1_macro,
    train,
    write_report,
)

__all__ = [
    "AttackedSample",
    "Beat",
    "CapsNetConfig",
    "CapsNetModel",
    "CapstabError",
    "CnnConfig",
    "CnnModel",
    "DataError",
    "Dataset",
    "Drift",
    "EvalReport",
    "Fgsm",
    "Lag",
    "NoiseMoveParams",
    "NumericError",
    "Offset",
    "ShapeError",
    "TrainConfig",
    "UsageError",
    "__version__",
    "accuracy",
    "cross_entropy_loss",
    "default_attack_specs",
    "dynamic_routing",
    "evaluate_matrix",
    "f1_macro",
    "fgsm_attack",
    "generate_attack_set",
    "load_csv",
    "load_model",
    "margin_loss",
    "noise_move_path",
    "save_csv",
    "save_model",
    "split",
    "squash",
    "synth_dataset",
    "train",
    "write_report",
]
