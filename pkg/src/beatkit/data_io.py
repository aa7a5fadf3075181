"""File formats and dataset plumbing.

* features: NPY v1.0 subset (little-endian float32, C order, rank 3), parsed
  and emitted by hand so malformed files fail with typed errors;
* annotations / beat outputs: UTF-8 text, one event per line,
  ``<seconds>\\t<position>`` with the position column optional;
* manifests: JSON documents listing pieces, folds and file paths;
* checkpoints: "BFM1" binary container with CRC32 integrity check;
* synthetic datasets: seeded pulse-train features with exact annotations.

All writers go through a temp-file-plus-rename so failures never leave
partial output behind.
"""

from __future__ import annotations

import ast
import json
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierParams
from .errors import (
    AnnotationError,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointVersionError,
    FeatureDtypeError,
    FeatureHeaderError,
    FeatureMagicError,
    FeatureRankError,
    FeatureTruncatedError,
    ManifestError,
)
from .model import ModelDims, ModelParams, named_params
from .msam import ChannelAttnParams, MsamParams, MsConvParams
from .sequences import BeatSequence
from .tensors import FeatureTensor

NPY_MAGIC = b"\x93NUMPY"
CHECKPOINT_MAGIC = b"BFM1"
CHECKPOINT_VERSION = 1

# synthetic pulse design: beats excite the first quarter of the feature axis,
# downbeats additionally the second quarter, with fixed amplitudes
BEAT_PULSE_AMPLITUDE = 1.0
DOWNBEAT_PULSE_AMPLITUDE = 1.5


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    """Write-to-temp-then-rename so failures never leave partial files."""
    _atomic_write(Path(path), text.encode("utf-8"))


# ---------------------------------------------------------------------------
# feature container (NPY v1.0 subset)


def write_features(path, tensor: FeatureTensor) -> None:
    """Store a tensor as little-endian float32, C order, rank 3."""
    arr = np.ascontiguousarray(tensor.data, dtype="<f4")
    header = (
        "{'descr': '<f4', 'fortran_order': False, 'shape': "
        f"{tuple(int(d) for d in arr.shape)}, }}"
    )
    # total header block (magic + version + length + text) padded to 64 bytes
    base = len(NPY_MAGIC) + 2 + 2
    pad = 64 - (base + len(header) + 1) % 64
    header_text = header + " " * pad + "\n"
    payload = (
        NPY_MAGIC
        + bytes((1, 0))
        + struct.pack("<H", len(header_text))
        + header_text.encode("latin1")
        + arr.tobytes()
    )
    _atomic_write(Path(path), payload)


def read_features(path, frame_rate_hz: float | None = None) -> FeatureTensor:
    """Load a feature file; promotes to float64.

    The frame rate comes from the argument, or failing that from a JSON
    sidecar ``<path>.json`` with a ``frame_rate_hz`` key.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(NPY_MAGIC) + 4 or raw[: len(NPY_MAGIC)] != NPY_MAGIC:
        raise FeatureMagicError(f"{path}: not a feature container")
    version = (raw[6], raw[7])
    if version != (1, 0):
        raise FeatureHeaderError(f"{path}: unsupported container version {version}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise FeatureTruncatedError(f"{path}: header truncated")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FeatureHeaderError(f"{path}: malformed header: {exc}") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= set(header):
        raise FeatureHeaderError(f"{path}: header missing required keys")
    if header["descr"] != "<f4":
        raise FeatureDtypeError(
            f"{path}: only little-endian float32 accepted, got {header['descr']!r}"
        )
    if header["fortran_order"] is not False:
        raise FeatureHeaderError(f"{path}: Fortran order not supported")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or not all(isinstance(d, int) and d >= 1 for d in shape)
    ):
        raise FeatureHeaderError(f"{path}: bad shape {shape!r}")
    if len(shape) != 3:
        raise FeatureRankError(f"{path}: expected rank 3, got rank {len(shape)}")
    count = int(np.prod(shape))
    body = raw[header_end:]
    if len(body) < 4 * count:
        raise FeatureTruncatedError(
            f"{path}: payload holds {len(body)} bytes, need {4 * count}"
        )
    data = np.frombuffer(body[: 4 * count], dtype="<f4").reshape(shape)
    if frame_rate_hz is None:
        sidecar = Path(str(path) + ".json")
        if sidecar.exists():
            frame_rate_hz = json.loads(sidecar.read_text()).get("frame_rate_hz")
    if frame_rate_hz is None:
        raise FeatureHeaderError(
            f"{path}: frame rate not provided and no sidecar metadata found"
        )
    return FeatureTensor(data.astype(np.float64), float(frame_rate_hz))


# ---------------------------------------------------------------------------
# annotations and beat output files


def read_annotations(path) -> BeatSequence:
    """Parse ``<time>`` or ``<time>\\t<position>`` lines into a BeatSequence."""
    times: list[float] = []
    positions: list[int] = []
    saw_position = None
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise AnnotationError(f"{path}: not a UTF-8 text file: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = text.split()
        try:
            when = float(fields[0])
        except ValueError as exc:
            raise AnnotationError(f"{path}:{lineno}: unparsable time {fields[0]!r}") from exc
        has_position = len(fields) > 1
        if saw_position is None:
            saw_position = has_position
        elif saw_position != has_position:
            raise AnnotationError(f"{path}:{lineno}: inconsistent position column")
        if has_position:
            try:
                positions.append(int(fields[1]))
            except ValueError as exc:
                raise AnnotationError(
                    f"{path}:{lineno}: unparsable position {fields[1]!r}"
                ) from exc
        if times and when <= times[-1]:
            raise AnnotationError(
                f"{path}:{lineno}: times must be strictly increasing ({when} after {times[-1]})"
            )
        times.append(when)
    try:
        return BeatSequence(np.asarray(times), np.asarray(positions) if positions else None)
    except ValueError as exc:
        raise AnnotationError(f"{path}: {exc}") from exc


def write_beats(path, seq: BeatSequence) -> None:
    """One event per line: seconds with 3 decimals, plus position if present."""
    lines = []
    for i, when in enumerate(seq.times):
        if seq.positions is not None:
            lines.append(f"{when:.3f}\t{int(seq.positions[i])}")
        else:
            lines.append(f"{when:.3f}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


def write_annotations(path, seq: BeatSequence, decimals: int = 6) -> None:
    """Like :func:`write_beats` but with enough precision for ground truth."""
    lines = []
    for i, when in enumerate(seq.times):
        if seq.positions is not None:
            lines.append(f"{when:.{decimals}f}\t{int(seq.positions[i])}")
        else:
            lines.append(f"{when:.{decimals}f}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n" if lines else "").encode("utf-8"))


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    piece_id: str
    feature_path: str
    annotation_path: str
    fold: int
    split: str | None = None


@dataclass
class Manifest:
    dataset: str
    frame_rate_hz: float
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def resolve(self, relative: str) -> Path:
        return (self.root / relative).resolve()


def save_manifest(path, manifest: Manifest) -> None:
    doc = {
        "dataset": manifest.dataset,
        "frame_rate_hz": manifest.frame_rate_hz,
        "entries": [
            {k: v for k, v in asdict(e).items() if v is not None} for e in manifest.entries
        ],
    }
    _atomic_write(Path(path), (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest: {exc}") from exc
    for key in ("dataset", "frame_rate_hz", "entries"):
        if key not in doc:
            raise ManifestError(f"{path}: manifest missing {key!r}")
    entries = []
    seen = set()
    for raw in doc["entries"]:
        try:
            entry = ManifestEntry(
                piece_id=raw["piece_id"],
                feature_path=raw["feature_path"],
                annotation_path=raw["annotation_path"],
                fold=int(raw["fold"]),
                split=raw.get("split"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: bad entry {raw!r}: {exc}") from exc
        if entry.piece_id in seen:
            raise ManifestError(f"{path}: duplicate piece_id {entry.piece_id!r}")
        seen.add(entry.piece_id)
        if not 0 <= entry.fold < 8:
            raise ManifestError(f"{path}: fold {entry.fold} outside [0, 8)")
        if entry.split not in (None, "train", "val"):
            raise ManifestError(f"{path}: bad split tag {entry.split!r}")
        entries.append(entry)
    manifest = Manifest(doc["dataset"], float(doc["frame_rate_hz"]), entries, path.parent)
    for entry in entries:
        for rel in (entry.feature_path, entry.annotation_path):
            if not manifest.resolve(rel).exists():
                raise ManifestError(f"{path}: referenced file missing: {rel}")
    return manifest


def split_folds(piece_ids: list[str], k: int = 8, seed: int = 0) -> list[int]:
    """Seeded shuffle then round-robin deal; returns fold per input position."""
    if len(piece_ids) < k:
        raise ValueError(f"need at least {k} pieces for {k} folds, got {len(piece_ids)}")
    order = np.random.default_rng(seed).permutation(len(piece_ids))
    folds = [0] * len(piece_ids)
    for slot, piece_index in enumerate(order):
        folds[piece_index] = slot % k
    return folds


# ---------------------------------------------------------------------------
# synthetic datasets


@dataclass
class SynthSpec:
    """Recipe for a deterministic pulse-train dataset."""

    piece_count: int = 16
    duration_range_s: tuple[float, float] = (20.0, 40.0)
    bpm_range: tuple[float, float] = (60.0, 180.0)
    beats_per_bar: tuple[int, ...] = (3, 4)
    tempo_drift: float = 0.0
    noise_sigma: float = 0.05
    n: int = 4
    f: int = 16
    frame_rate_hz: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.piece_count < 1:
            raise ValueError("piece_count must be >= 1")
        if not (0 < self.bpm_range[0] <= self.bpm_range[1] < 400):
            raise ValueError(f"bpm range must sit inside (0, 400): {self.bpm_range}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.f < 4:
            raise ValueError("need f >= 4 for the pulse subbands")
        if self.tempo_drift < 0 or self.tempo_drift >= 1:
            raise ValueError("tempo drift fraction must lie in [0, 1)")


def synth_beat_grid(
    duration_s: float,
    bpm_start: float,
    bpm_end: float,
    phase_s: float,
    meter: int,
    start_position: int,
) -> BeatSequence:
    """Beat times under a linear tempo ramp, with cycling metrical positions."""
    times = []
    positions = []
    t = phase_s
    k = 0
    while t < duration_s:
        times.append(t)
        positions.append((start_position + k) % meter + 1)
        frac = t / duration_s
        bpm = bpm_start + (bpm_end - bpm_start) * frac
        t += 60.0 / bpm
        k += 1
    return BeatSequence(np.asarray(times), np.asarray(positions))


def generate_synthetic(spec: SynthSpec, out_dir) -> Manifest:
    """Write features, annotations and a manifest for a synthetic dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    fps = spec.frame_rate_hz
    entries = []
    for index in range(spec.piece_count):
        piece_id = f"synth{index:04d}"
        duration = float(rng.uniform(*spec.duration_range_s))
        bpm = float(rng.uniform(*spec.bpm_range))
        drift = float(rng.uniform(-spec.tempo_drift, spec.tempo_drift)) if spec.tempo_drift else 0.0
        meter = int(rng.choice(np.asarray(spec.beats_per_bar)))
        phase = float(rng.uniform(0.0, 60.0 / bpm))
        start_position = int(rng.integers(0, meter))
        grid = synth_beat_grid(duration, bpm, bpm * (1.0 + drift), phase, meter, start_position)
        t_frames = int(round(duration * fps))
        data = rng.normal(0.0, spec.noise_sigma, size=(spec.n, spec.f, t_frames))
        quarter = spec.f // 4
        for when, position in zip(grid.times, grid.positions):
            frame = min(int(round(when * fps)), t_frames - 1)
            data[:, :quarter, frame] += BEAT_PULSE_AMPLITUDE
            if position == 1:
                data[:, quarter : 2 * quarter, frame] += DOWNBEAT_PULSE_AMPLITUDE
        feature_rel = f"{piece_id}.npy"
        annotation_rel = f"{piece_id}.beats"
        write_features(out / feature_rel, FeatureTensor(data, fps))
        write_annotations(out / annotation_rel, grid)
        entries.append(ManifestEntry(piece_id, feature_rel, annotation_rel, fold=0))
    folds = split_folds([e.piece_id for e in entries], k=min(8, len(entries)), seed=spec.seed)
    for entry, fold in zip(entries, folds):
        entry.fold = fold
    manifest = Manifest("synthetic", fps, entries, out)
    save_manifest(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ModelParams
    config: dict
    best_val_loss: float
    seed: int


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f8")
    encoded = name.encode("utf-8")
    return (
        struct.pack("<H", len(encoded))
        + encoded
        + struct.pack("<B", data.ndim)
        + struct.pack(f"<{data.ndim}I", *data.shape)
        + data.tobytes()
    )


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    """BFM1 container: version, JSON meta, named float64 tensors, CRC32."""
    params = checkpoint.params
    meta = {
        "dims": asdict(params.dims),
        "config": checkpoint.config,
        "best_val_loss": checkpoint.best_val_loss,
        "seed": checkpoint.seed,
    }
    meta_bytes = json.dumps(meta).encode("utf-8")
    tensors = named_params(params)
    body = struct.pack("<I", CHECKPOINT_VERSION)
    body += struct.pack("<I", len(meta_bytes)) + meta_bytes
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    payload = CHECKPOINT_MAGIC + body + struct.pack("<I", zlib.crc32(body))
    _atomic_write(Path(path), payload)


def _rebuild_params(dims: ModelDims, tensors: dict[str, np.ndarray]) -> ModelParams:
    def branch(name: str) -> MsConvParams | None:
        if f"msam.{name}.mlp_weight" not in tensors:
            return None
        kernels = []
        i = 0
        while f"msam.{name}.kernel{i}" in tensors:
            kernels.append(tensors[f"msam.{name}.kernel{i}"])
            i += 1
        return MsConvParams(
            kernels=kernels,
            dilations=tuple(dims.dilations[: len(kernels)]),
            mlp_weight=tensors[f"msam.{name}.mlp_weight"],
            mlp_bias=tensors[f"msam.{name}.mlp_bias"],
        )

    channel = None
    if "msam.channel.w_q" in tensors:
        channel = ChannelAttnParams(
            w_q=tensors["msam.channel.w_q"],
            w_k=tensors["msam.channel.w_k"],
            w_v=tensors["msam.channel.w_v"],
            w_out=tensors["msam.channel.w_out"],
        )
    classifier = ClassifierParams(
        w_shared=tensors["classifier.w_shared"],
        b_shared=tensors["classifier.b_shared"],
        w_beat=tensors["classifier.w_beat"],
        b_beat=tensors["classifier.b_beat"],
        w_down=tensors["classifier.w_down"],
        b_down=tensors["classifier.b_down"],
    )
    return ModelParams(MsamParams(branch("temporal"), branch("frequency"), channel), classifier, dims)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} not supported (expected {CHECKPOINT_VERSION})"
        )
    body, (stored_crc,) = raw[4:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != stored_crc:
        raise CheckpointChecksumError(f"{path}: checksum mismatch, file corrupt")
    try:
        cursor = 8
        (meta_len,) = struct.unpack("<I", raw[cursor : cursor + 4])
        cursor += 4
        meta = json.loads(raw[cursor : cursor + meta_len].decode("utf-8"))
        cursor += meta_len
        (tensor_count,) = struct.unpack("<I", raw[cursor : cursor + 4])
        cursor += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(tensor_count):
            (name_len,) = struct.unpack("<H", raw[cursor : cursor + 2])
            cursor += 2
            name = raw[cursor : cursor + name_len].decode("utf-8")
            cursor += name_len
            ndim = raw[cursor]
            cursor += 1
            shape = struct.unpack(f"<{ndim}I", raw[cursor : cursor + 4 * ndim])
            cursor += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(raw[cursor : cursor + 8 * count], dtype="<f8").reshape(shape)
            cursor += 8 * count
            tensors[name] = arr.astype(np.float64)
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint body: {exc}") from exc
    dims_raw = dict(meta["dims"])
    dims_raw["dilations"] = tuple(dims_raw["dilations"])
    dims = ModelDims(**dims_raw)
    params = _rebuild_params(dims, tensors)
    best = meta["best_val_loss"]
    best_val = math.inf if best is None else float(best)
    return Checkpoint(params, meta["config"], best_val, int(meta["seed"]))
