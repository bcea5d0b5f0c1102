"""Keyframe-guided multi-skill locomotion learning on a planar quadruped toy simulator."""

import os as _os

# the only environment knob: BLAS/OpenMP thread count, applied before numpy loads
if "KIRAS_NUM_THREADS" in _os.environ:
    for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_v, _os.environ["KIRAS_NUM_THREADS"])

from .config import TrainConfig, load_config, preset
from .keyframes import Keyframe, builtin_keyframes, load_keyframes
from .trainer import Trainer, TrainingAborted, evaluate, replay

__version__ = "0.1.0"

__all__ = ["TrainConfig", "load_config", "preset", "Keyframe", "builtin_keyframes", "load_keyframes",
           "Trainer", "TrainingAborted", "evaluate", "replay", "__version__"]
