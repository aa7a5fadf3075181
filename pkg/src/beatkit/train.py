"""Desk-scale training: clip slicing, Adam, early stopping, ablation harness.

Pieces are cut into overlapping fixed-length clips; clips inherit their
piece's split so no piece ever feeds both training and validation. The whole
loop is deterministic given (manifest, config, seed).
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .classifier import FrameTargets, bce_loss, widen_labels
from .data_io import Checkpoint, Manifest, read_annotations, read_features
from .dbn import DbnConfig, joint_downbeat_decode
from .errors import TrainingError
from .metrics import evaluate_dataset
from .model import (
    ModelDims,
    ModelParams,
    accumulate_grads,
    count_params,
    forward,
    init_params,
    loss_and_grads,
    named_grads,
    named_params,
    zero_grads,
)
from .sequences import BeatSequence
from .tensors import FeatureTensor


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 20
    clip_seconds: float = 15.0
    clip_overlap_seconds: float = 5.0
    seed: int = 0
    max_epochs: int = 100
    temporal: bool = True
    frequency: bool = True
    channel: bool = True
    hidden: int = 128
    attn_dim: int = 16
    kernel_width: int = 3
    channel_kernel_width: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)
    val_fraction: float = 0.15
    grad_clip_norm: float = 5.0
    min_improvement: float = 1e-5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.clip_overlap_seconds < self.clip_seconds:
            raise ValueError("clip overlap must be shorter than the clip itself")
        if self.early_stop_patience < 1:
            raise ValueError("early stopping patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


@dataclass
class ClipIndex:
    piece_id: str
    feature_path: str
    start_frame: int
    end_frame: int
    split: str


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    timestamp: str


def slice_clips(
    piece_length_frames: int, frame_rate_hz: float, cfg: TrainConfig
) -> list[tuple[int, int]]:
    """Window starts on the hop grid; a shorter tail clip is emitted only when
    at least ``clip_overlap_seconds`` of audio would otherwise stay uncovered.
    """
    if piece_length_frames <= 0 or frame_rate_hz <= 0:
        raise ValueError("piece length and frame rate must be positive")
    window = int(round(cfg.clip_seconds * frame_rate_hz))
    hop = int(round((cfg.clip_seconds - cfg.clip_overlap_seconds) * frame_rate_hz))
    tail_min = int(round(cfg.clip_overlap_seconds * frame_rate_hz))
    clips: list[tuple[int, int]] = []
    covered = 0
    start = 0
    while start + window <= piece_length_frames:
        clips.append((start, start + window))
        covered = start + window
        start += hop
    if piece_length_frames - covered >= tail_min and start < piece_length_frames:
        clips.append((start, piece_length_frames))
    return clips


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: ModelParams, grads: dict, state: AdamState, cfg: TrainConfig
) -> tuple[ModelParams, AdamState]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    lr, b1, b2, eps = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
    pairs = named_params(params)
    grad_pairs = dict(named_grads(params, grads))
    for name, arr in pairs:
        grad = grad_pairs[name]
        if grad.shape != arr.shape:
            raise ValueError(f"gradient shape {grad.shape} != param shape {arr.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def clip_grad_norm(params: ModelParams, grads: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    arrays = [g for _, g in named_grads(params, grads)]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in arrays)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in arrays:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# dataset assembly


def assign_splits(piece_ids: list[str], fraction: float) -> dict[str, str]:
    """Deterministic piece-level split: the ``fraction`` of pieces whose md5
    digest ranks lowest become validation (at least one of each split)."""
    if len(piece_ids) < 2:
        raise TrainingError("need at least two pieces to form train and val splits")
    ranked = sorted(piece_ids, key=lambda s: hashlib.md5(s.encode("utf-8")).hexdigest())
    n_val = min(len(piece_ids) - 1, max(1, round(fraction * len(piece_ids))))
    val = set(ranked[:n_val])
    return {pid: ("val" if pid in val else "train") for pid in piece_ids}


@dataclass
class _Piece:
    entry_id: str
    feature_path: str
    tensor: FeatureTensor
    beats: BeatSequence
    split: str


def _load_pieces(manifest: Manifest, cfg: TrainConfig, exclude_folds) -> list[_Piece]:
    excluded = set(exclude_folds)
    kept = [e for e in manifest.entries if e.fold not in excluded]
    untagged = [e.piece_id for e in kept if e.split is None]
    hashed = assign_splits(untagged, cfg.val_fraction) if len(untagged) >= 2 else {}
    pieces = []
    for entry in kept:
        tensor = read_features(manifest.resolve(entry.feature_path), manifest.frame_rate_hz)
        beats = read_annotations(manifest.resolve(entry.annotation_path))
        split = entry.split or hashed.get(entry.piece_id, "train")
        pieces.append(_Piece(entry.piece_id, entry.feature_path, tensor, beats, split))
    return pieces


def _clip_targets(piece: _Piece, start: int, end: int, fps: float) -> FrameTargets:
    length = end - start
    beat_frames = []
    down_frames = []
    for when, position in zip(
        piece.beats.times,
        piece.beats.positions if piece.beats.positions is not None else [0] * len(piece.beats),
    ):
        frame = int(round(when * fps))
        if start <= frame < end:
            beat_frames.append(frame - start)
            if position == 1:
                down_frames.append(frame - start)
    return FrameTargets(widen_labels(beat_frames, length), widen_labels(down_frames, length))


def build_clip_index(pieces: list[_Piece], cfg: TrainConfig, fps: float) -> list[ClipIndex]:
    clips = []
    for piece in pieces:
        for start, end in slice_clips(piece.tensor.t, fps, cfg):
            clips.append(ClipIndex(piece.entry_id, piece.feature_path, start, end, piece.split))
    split_by_piece: dict[str, set[str]] = {}
    for clip in clips:
        split_by_piece.setdefault(clip.piece_id, set()).add(clip.split)
    for piece_id, splits in split_by_piece.items():
        if len(splits) != 1:
            raise TrainingError(f"piece {piece_id} appears in multiple splits: {splits}")
    return clips


# ---------------------------------------------------------------------------
# training loop


def train_model(
    manifest: Manifest,
    cfg: TrainConfig,
    exclude_folds=(),
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train on the manifest, returning the best-validation checkpoint and log."""
    fps = manifest.frame_rate_hz
    pieces = _load_pieces(manifest, cfg, exclude_folds)
    if not pieces:
        raise TrainingError("no pieces left after fold exclusion")
    n, f = pieces[0].tensor.n, pieces[0].tensor.f
    for piece in pieces:
        if (piece.tensor.n, piece.tensor.f) != (n, f):
            raise TrainingError(
                f"inconsistent feature shape for {piece.entry_id}: "
                f"({piece.tensor.n}, {piece.tensor.f}) != ({n}, {f})"
            )
    clips = build_clip_index(pieces, cfg, fps)
    by_id = {piece.entry_id: piece for piece in pieces}
    train_clips = [c for c in clips if c.split == "train"]
    val_clips = [c for c in clips if c.split == "val"]
    if not train_clips or not val_clips:
        raise TrainingError(
            f"empty split: {len(train_clips)} train / {len(val_clips)} val clips"
        )
    targets = {
        (clip.piece_id, clip.start_frame, clip.end_frame): _clip_targets(
            by_id[clip.piece_id], clip.start_frame, clip.end_frame, fps
        )
        for clip in clips
    }

    def clip_key(clip: ClipIndex):
        return (clip.piece_id, clip.start_frame, clip.end_frame)

    dims = ModelDims(
        n=n,
        f=f,
        hidden=cfg.hidden,
        attn_dim=cfg.attn_dim,
        kernel_width=cfg.kernel_width,
        channel_kernel_width=cfg.channel_kernel_width,
        dilations=tuple(cfg.dilations),
        temporal=cfg.temporal,
        frequency=cfg.frequency,
        channel=cfg.channel,
    )
    rng = np.random.default_rng(cfg.seed)
    params = init_params(rng, dims)
    state = AdamState()
    best_val = float("inf")
    best_snapshot = _snapshot(params)
    epochs_since_best = 0
    log: list[EpochRecord] = []

    def clip_loss_and_grads(clip: ClipIndex):
        piece = by_id[clip.piece_id]
        window = piece.tensor.slice_frames(clip.start_frame, clip.end_frame)
        return loss_and_grads(params, window, targets[clip_key(clip)])

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train_clips))
        train_losses = []
        for batch_start in range(0, len(order), cfg.batch_size):
            batch = [train_clips[i] for i in order[batch_start : batch_start + cfg.batch_size]]
            total = zero_grads(params)
            batch_loss = 0.0
            for clip in batch:
                loss, grads, _ = clip_loss_and_grads(clip)
                batch_loss += loss
                accumulate_grads(total, grads)
            if not np.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}; aborting")
            scale = 1.0 / len(batch)
            for _, g in named_grads(params, total):
                g *= scale
            clip_grad_norm(params, total, cfg.grad_clip_norm)
            adam_step(params, total, state, cfg)
            train_losses.append(batch_loss * scale)
        val_losses = []
        for clip in val_clips:
            piece = by_id[clip.piece_id]
            window = piece.tensor.slice_frames(clip.start_frame, clip.end_frame)
            curves, _ = forward(params, window)
            loss, _, _ = bce_loss(curves, targets[clip_key(clip)])
            val_losses.append(loss)
        train_loss = float(np.mean(train_losses))
        val_loss = float(np.mean(val_losses))
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss at epoch {epoch}; aborting")
        log.append(
            EpochRecord(epoch, train_loss, val_loss, time.strftime("%Y-%m-%dT%H:%M:%S"))
        )
        if val_loss < best_val - cfg.min_improvement:
            best_val = val_loss
            best_snapshot = _snapshot(params)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.early_stop_patience:
                break

    checkpoint = Checkpoint(
        params=_restore(params, best_snapshot),
        config=asdict(cfg),
        best_val_loss=best_val,
        seed=cfg.seed,
    )
    return checkpoint, log


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in named_params(params)}


def _restore(params: ModelParams, snapshot: dict[str, np.ndarray]) -> ModelParams:
    for name, arr in named_params(params):
        arr[...] = snapshot[name]
    return params


# ---------------------------------------------------------------------------
# ablation harness


# Table row order: none, T, F, C, TF, TC, FC, TFC
ABLATION_ORDER = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
]


@dataclass
class AblationRow:
    temporal: bool
    frequency: bool
    channel: bool
    f_measure: float
    param_count: int


def track_manifest_fold(
    params: ModelParams, manifest: Manifest, fold: int, dbn_cfg: DbnConfig
) -> list[tuple[BeatSequence, BeatSequence, str]]:
    """Decode every piece of one fold; returns (estimate, reference, id) rows."""
    rows = []
    for entry in manifest.entries:
        if entry.fold != fold:
            continue
        tensor = read_features(manifest.resolve(entry.feature_path), manifest.frame_rate_hz)
        reference = read_annotations(manifest.resolve(entry.annotation_path))
        curves, _ = forward(params, tensor)
        estimate = joint_downbeat_decode(curves.beat, curves.downbeat, dbn_cfg)
        rows.append((estimate, reference, entry.piece_id))
    return rows


def run_ablation(
    manifest: Manifest,
    cfg: TrainConfig,
    test_fold: int,
    dbn_cfg: DbnConfig | None = None,
) -> list[AblationRow]:
    """Train and evaluate all eight sub-module combinations with a shared seed."""
    if dbn_cfg is None:
        dbn_cfg = DbnConfig(frame_rate_hz=manifest.frame_rate_hz)
    rows = []
    for temporal, frequency, channel in ABLATION_ORDER:
        row_cfg = replace(cfg, temporal=temporal, frequency=frequency, channel=channel)
        checkpoint, _ = train_model(manifest, row_cfg, exclude_folds=(test_fold,))
        tracked = track_manifest_fold(checkpoint.params, manifest, test_fold, dbn_cfg)
        report = evaluate_dataset(
            [(est, ref) for est, ref, _ in tracked],
            piece_ids=[piece_id for _, _, piece_id in tracked],
        )
        rows.append(
            AblationRow(temporal, frequency, channel, report.f_measure, count_params(checkpoint.params))
        )
    return rows
