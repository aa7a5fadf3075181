"""Per-frame beat/downbeat heads, widened training targets and the BCE loss.

The classifier flattens each frame of the gated feature tensor into an
``n*f`` vector, passes it through one hidden ReLU layer and two independent
sigmoid heads. Targets around every annotated beat frame are widened to
1.0 / 0.5 / 0.25 at offsets 0 / +-1 / +-2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .msam import sigmoid
from .tensors import FeatureTensor

CLAMP_EPS = 1e-7
WIDEN_WEIGHTS = (1.0, 0.5, 0.25)  # offsets 0, +-1, +-2


@dataclass
class ClassifierParams:
    """Shared hidden layer plus two scalar heads.

    w_shared: [d_h, n*f], b_shared: [d_h]
    w_beat / w_down: [1, d_h], b_beat / b_down: [1]
    """

    w_shared: np.ndarray
    b_shared: np.ndarray
    w_beat: np.ndarray
    b_beat: np.ndarray
    w_down: np.ndarray
    b_down: np.ndarray

    def __post_init__(self):
        d_h = self.w_shared.shape[0]
        if self.b_shared.shape != (d_h,):
            raise ShapeError(f"b_shared must be [{d_h}], got {self.b_shared.shape}")
        for name, w in (("w_beat", self.w_beat), ("w_down", self.w_down)):
            if w.shape != (1, d_h):
                raise ShapeError(f"{name} must be [1, {d_h}], got {w.shape}")
        for name, b in (("b_beat", self.b_beat), ("b_down", self.b_down)):
            if b.shape != (1,):
                raise ShapeError(f"{name} must be [1], got {b.shape}")

    @property
    def d_h(self) -> int:
        return self.w_shared.shape[0]

    @property
    def in_width(self) -> int:
        return self.w_shared.shape[1]


@dataclass
class ActivationCurves:
    """Per-frame beat and downbeat probabilities in [0, 1]."""

    beat: np.ndarray
    downbeat: np.ndarray
    frame_rate_hz: float

    def __post_init__(self):
        beat = np.asarray(self.beat, dtype=np.float64).reshape(-1)
        down = np.asarray(self.downbeat, dtype=np.float64).reshape(-1)
        if beat.shape != down.shape:
            raise ShapeError("beat and downbeat curves must have equal length")
        for name, curve in (("beat", beat), ("downbeat", down)):
            if curve.size and (curve.min() < 0.0 or curve.max() > 1.0):
                raise ValueError(f"{name} activations must lie in [0, 1]")
        if not self.frame_rate_hz > 0:
            raise ValueError("frame rate must be positive")
        self.beat = beat
        self.downbeat = down

    @property
    def t(self) -> int:
        return int(self.beat.size)


TARGET_LEVELS = (0.0, 0.25, 0.5, 1.0)


@dataclass
class FrameTargets:
    """Widened per-frame supervision for the two heads.

    Values come from :func:`widen_labels`, so only the four widening levels
    are legal.
    """

    beat_target: np.ndarray
    downbeat_target: np.ndarray

    def __post_init__(self):
        bt = np.asarray(self.beat_target, dtype=np.float64).reshape(-1)
        dt = np.asarray(self.downbeat_target, dtype=np.float64).reshape(-1)
        if bt.shape != dt.shape:
            raise ShapeError("target vectors must have equal length")
        for vec in (bt, dt):
            if not np.isin(vec, TARGET_LEVELS).all():
                raise ValueError(
                    f"targets must take values in {TARGET_LEVELS}"
                )
        self.beat_target = bt
        self.downbeat_target = dt


@dataclass
class ClassifierCache:
    """Forward intermediates for the backward pass."""

    params: ClassifierParams
    frames: np.ndarray  # [n*f, t] flattened input
    pre_hidden: np.ndarray  # [d_h, t] before ReLU
    hidden: np.ndarray  # [d_h, t]
    beat_logit: np.ndarray  # [t]
    down_logit: np.ndarray  # [t]
    in_shape: tuple[int, int, int]


def classify(
    h_tilde: FeatureTensor, params: ClassifierParams
) -> tuple[ActivationCurves, ClassifierCache]:
    """Per-frame probabilities: sigmoid heads over a shared ReLU layer."""
    n, f, t = h_tilde.shape
    if n * f != params.in_width:
        raise ShapeError(
            f"classifier expects {params.in_width} inputs per frame, tensor gives {n * f}"
        )
    frames = h_tilde.data.reshape(n * f, t)
    pre_hidden = params.w_shared @ frames + params.b_shared[:, None]
    hidden = np.maximum(pre_hidden, 0.0)
    beat_logit = (params.w_beat @ hidden)[0] + params.b_beat[0]
    down_logit = (params.w_down @ hidden)[0] + params.b_down[0]
    curves = ActivationCurves(sigmoid(beat_logit), sigmoid(down_logit), h_tilde.frame_rate_hz)
    cache = ClassifierCache(params, frames, pre_hidden, hidden, beat_logit, down_logit, (n, f, t))
    return curves, cache


def classifier_backward(
    cache: ClassifierCache, grad_beat_logit: np.ndarray, grad_down_logit: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Gradients w.r.t. the input tensor and all classifier parameters."""
    p = cache.params
    grad_hidden = p.w_beat.T @ grad_beat_logit[None, :] + p.w_down.T @ grad_down_logit[None, :]
    grad_pre = grad_hidden * (cache.pre_hidden > 0.0)
    grads = {
        "w_shared": grad_pre @ cache.frames.T,
        "b_shared": grad_pre.sum(axis=1),
        "w_beat": grad_beat_logit[None, :] @ cache.hidden.T,
        "b_beat": np.array([grad_beat_logit.sum()]),
        "w_down": grad_down_logit[None, :] @ cache.hidden.T,
        "b_down": np.array([grad_down_logit.sum()]),
    }
    grad_frames = p.w_shared.T @ grad_pre
    return grad_frames.reshape(cache.in_shape), grads


def zero_classifier_grads(params: ClassifierParams) -> dict:
    return {
        "w_shared": np.zeros_like(params.w_shared),
        "b_shared": np.zeros_like(params.b_shared),
        "w_beat": np.zeros_like(params.w_beat),
        "b_beat": np.zeros_like(params.b_beat),
        "w_down": np.zeros_like(params.w_down),
        "b_down": np.zeros_like(params.b_down),
    }


def widen_labels(beat_frames, t: int) -> np.ndarray:
    """Widened target vector: 1.0 at each beat frame, 0.5 / 0.25 at +-1 / +-2.

    Overlapping halos combine by element-wise max; out-of-range neighbours are
    dropped. ``beat_frames`` must be sorted and inside ``[0, t)``.
    """
    frames = [int(k) for k in beat_frames]
    if frames != sorted(frames):
        raise ValueError(f"beat frames must be sorted: {frames}")
    if any(k < 0 or k >= t for k in frames):
        raise ValueError(f"beat frames must lie in [0, {t})")
    target = np.zeros(t, dtype=np.float64)
    for k in frames:
        for offset, weight in ((0, 1.0), (1, 0.5), (-1, 0.5), (2, 0.25), (-2, 0.25)):
            idx = k + offset
            if 0 <= idx < t:
                target[idx] = max(target[idx], weight)
    return target


def bce_loss(
    curves: ActivationCurves, targets: FrameTargets
) -> tuple[float, np.ndarray, np.ndarray]:
    """Two-head binary cross-entropy, mean over frames, heads equally weighted.

    Predictions are clamped to [eps, 1-eps] with eps = 1e-7 before the logs.
    Returns ``(loss, grad wrt beat logits, grad wrt downbeat logits)`` where
    the logit gradients are exact derivatives of the clamped loss assuming the
    curves came out of a sigmoid.
    """
    if curves.t != targets.beat_target.size:
        raise ShapeError(
            f"curve length {curves.t} does not match target length {targets.beat_target.size}"
        )
    t = curves.t
    loss = 0.0
    grads = []
    for pred, target in (
        (curves.beat, targets.beat_target),
        (curves.downbeat, targets.downbeat_target),
    ):
        clamped = np.clip(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
        loss += float(
            -(target * np.log(clamped) + (1.0 - target) * np.log(1.0 - clamped)).mean()
        )
        inside = (pred > CLAMP_EPS) & (pred < 1.0 - CLAMP_EPS)
        grads.append(np.where(inside, (pred - target) / t, 0.0))
    return loss, grads[0], grads[1]
