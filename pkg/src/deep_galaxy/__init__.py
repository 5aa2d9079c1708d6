"""A small numpy CNN framework for 3-class galaxy morphology classification."""

__version__ = "0.1.0"

from ._kernels import backend, configure_threads
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, GalaxyClass, SplitSpec, generate_dataset, stratified_split
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DeepGalaxyError,
    InvalidShapeError,
    NonFiniteError,
    NumericDivergenceError,
)
from .metrics import EvalReport, confusion, median
from .network import (
    PROFILES,
    DeepGalaxyNet,
    NetworkConfig,
    TrainConfig,
    build_network,
    evaluate,
    forward,
    predict,
    run_protocol,
    train,
    train_step,
)

__all__ = [
    "__version__", "backend", "configure_threads",
    "load_checkpoint", "save_checkpoint",
    "Dataset", "GalaxyClass", "SplitSpec", "generate_dataset", "stratified_split",
    "CheckpointError", "ConfigError", "DataError", "DeepGalaxyError", "InvalidShapeError",
    "NonFiniteError", "NumericDivergenceError",
    "EvalReport", "confusion", "median",
    "PROFILES", "DeepGalaxyNet", "NetworkConfig", "TrainConfig", "build_network", "evaluate",
    "forward", "predict", "run_protocol", "train", "train_step",
]
