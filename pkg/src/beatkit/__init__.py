"""Beat and downbeat tracking on stacked feature tensors.

Pipeline: feature tensors (read from files or generated synthetically) pass
through a multi-axis attention module and per-frame classifier heads, the
activation curves are decoded by a bar-pointer hidden-Markov model, and the
resulting beat sequences are scored with F-measure and continuity metrics.
"""

from .classifier import ActivationCurves, ClassifierParams, FrameTargets
from .dbn import DbnConfig, joint_downbeat_decode, pick_peaks, viterbi_decode
from .metrics import EvalReport, evaluate_dataset, evaluate_pair
from .model import ModelDims, ModelParams, forward, init_params
from .msam import AttentionMaps, MsamParams, msam_backward, msam_forward
from .sequences import BeatSequence
from .tensors import FeatureTensor
from .train import TrainConfig, run_ablation, train_model

__all__ = [
    "ActivationCurves",
    "AttentionMaps",
    "BeatSequence",
    "ClassifierParams",
    "DbnConfig",
    "EvalReport",
    "FeatureTensor",
    "FrameTargets",
    "ModelDims",
    "ModelParams",
    "MsamParams",
    "TrainConfig",
    "evaluate_dataset",
    "evaluate_pair",
    "forward",
    "init_params",
    "joint_downbeat_decode",
    "msam_backward",
    "msam_forward",
    "pick_peaks",
    "run_ablation",
    "train_model",
    "viterbi_decode",
]

__version__ = "0.1.0"
