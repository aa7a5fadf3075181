"""Command-line entry point: synth, train, track, eval, ablate, gradcheck.

Exit codes: 0 success, 1 validation error, 2 I/O error. Flags override values
read from an optional JSON config file with flat dotted keys, e.g.
``{"train.learning_rate": 3e-4, "dbn.min_bpm": 55}``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import data_io, gradcheck
from .dbn import DbnConfig, joint_downbeat_decode, viterbi_decode
from .errors import BeatkitError
from .metrics import aggregate_reports, evaluate_pair
from .model import forward
from .train import ABLATION_ORDER, TrainConfig, run_ablation, train_model


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise BeatkitError("config file must hold a JSON object of dotted keys")
    return doc


def _section(config: dict, prefix: str) -> dict:
    out = {}
    for key, value in config.items():
        head, _, tail = key.partition(".")
        if head == prefix and tail:
            out[tail] = value
    return out


def _build(cls, section: dict, overrides: dict):
    values = dict(section)
    values.update({k: v for k, v in overrides.items() if v is not None})
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - field_names
    if unknown:
        raise BeatkitError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for name in ("dilations", "beats_per_bar", "duration_range_s", "bpm_range"):
        if name in values and isinstance(values[name], list):
            values[name] = tuple(values[name])
    return cls(**values)


def _dbn_config(args, config: dict, frame_rate: float) -> DbnConfig:
    overrides = {
        "frame_rate_hz": frame_rate,
        "min_bpm": getattr(args, "min_bpm", None),
        "max_bpm": getattr(args, "max_bpm", None),
    }
    return _build(DbnConfig, _section(config, "dbn"), overrides)


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    spec = _build(
        data_io.SynthSpec,
        _section(config, "synth"),
        {
            "seed": args.seed,
            "piece_count": args.pieces,
            "frame_rate_hz": args.frame_rate,
        },
    )
    manifest = data_io.generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest.entries)} pieces to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    cfg = _build(
        TrainConfig,
        _section(config, "train"),
        {"seed": args.seed, "max_epochs": args.max_epochs},
    )
    manifest = data_io.load_manifest(args.manifest)
    exclude = (args.test_fold,) if args.test_fold is not None else ()
    checkpoint, log = train_model(manifest, cfg, exclude_folds=exclude)
    data_io.save_checkpoint(args.out, checkpoint)
    if args.log:
        lines = [json.dumps(dataclasses.asdict(record)) for record in log]
        data_io.atomic_write_text(args.log, "\n".join(lines) + ("\n" if lines else ""))
    for record in log:
        print(
            f"epoch {record.epoch:3d}  train {record.train_loss:.6f}  val {record.val_loss:.6f}"
        )
    print(f"best validation loss {checkpoint.best_val_loss:.6f} -> {args.out}")
    return 0


def _track_one(task):
    checkpoint_path, feature_path, frame_rate, dbn_cfg, beats_only, out_path = task
    checkpoint = data_io.load_checkpoint(checkpoint_path)
    tensor = data_io.read_features(feature_path, frame_rate)
    curves, _ = forward(checkpoint.params, tensor)
    if beats_only:
        sequence = viterbi_decode(curves.beat, dbn_cfg)
    else:
        sequence = joint_downbeat_decode(curves.beat, curves.downbeat, dbn_cfg)
    data_io.write_beats(out_path, sequence)
    return out_path


def cmd_track(args) -> int:
    config = _load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = data_io.load_manifest(args.manifest)
        frame_rate = manifest.frame_rate_hz
        jobs = [
            (str(manifest.resolve(e.feature_path)), e.piece_id)
            for e in manifest.entries
            if args.fold is None or e.fold == args.fold
        ]
    else:
        if not args.features:
            raise BeatkitError("track needs --manifest or feature files")
        frame_rate = args.frame_rate
        jobs = [(path, Path(path).stem) for path in args.features]
    dbn_cfg = _dbn_config(args, config, frame_rate)
    tasks = [
        (args.checkpoint, path, frame_rate, dbn_cfg, args.beats_only, str(out_dir / f"{stem}.beats"))
        for path, stem in jobs
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for out_path in pool.map(_track_one, tasks):
                print(out_path)
    else:
        for task in tasks:
            print(_track_one(task))
    return 0


BEAT_FILE_SUFFIXES = {".beats", ".txt", ".tsv"}


def _beat_files(directory: Path) -> dict[str, Path]:
    return {
        p.stem.split(".")[0]: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix in BEAT_FILE_SUFFIXES
    }


def _pair_files(est_path: Path, ref_path: Path) -> list[tuple[Path, Path, str]]:
    if est_path.is_file():
        return [(est_path, ref_path, est_path.stem)]
    ref_by_stem = _beat_files(ref_path)
    pairs = [
        (est, ref_by_stem[stem], stem)
        for stem, est in _beat_files(est_path).items()
        if stem in ref_by_stem
    ]
    if not pairs:
        raise BeatkitError(f"no estimate/reference pairs found under {est_path}")
    return pairs


def _eval_one(task):
    est_file, ref_file, stem, trim = task
    est = data_io.read_annotations(est_file)
    ref = data_io.read_annotations(ref_file)
    return evaluate_pair(est, ref, trim=trim, piece_id=stem)


def cmd_eval(args) -> int:
    pairs = _pair_files(Path(args.estimates), Path(args.references))
    tasks = [(est, ref, stem, not args.no_trim) for est, ref, stem in pairs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(_eval_one, tasks))
    else:
        reports = [_eval_one(task) for task in tasks]
    report = aggregate_reports(reports)
    rows = report.per_piece + [report]
    print(f"{'piece':<16} {'F':>7} {'CMLc':>7} {'CMLt':>7} {'AMLc':>7} {'AMLt':>7}")
    for row in rows:
        print(
            f"{row.piece_id:<16} {row.f_measure:7.4f} {row.cml_c:7.4f}"
            f" {row.cml_t:7.4f} {row.aml_c:7.4f} {row.aml_t:7.4f}"
        )
    if args.out:
        lines = [json.dumps(row.as_dict()) for row in rows]
        data_io.atomic_write_text(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    cfg = _build(
        TrainConfig,
        _section(config, "train"),
        {"seed": args.seed, "max_epochs": args.max_epochs},
    )
    manifest = data_io.load_manifest(args.manifest)
    mask = None
    if args.ablate_mask:
        wanted = set(args.ablate_mask.split(","))
        unknown = wanted - {"t", "f", "c"}
        if unknown:
            raise BeatkitError(f"bad --ablate-mask entries: {sorted(unknown)}")
        mask = ("t" in wanted, "f" in wanted, "c" in wanted)
    dbn_cfg = _dbn_config(args, config, manifest.frame_rate_hz)
    rows = run_ablation(manifest, cfg, test_fold=args.test_fold, dbn_cfg=dbn_cfg)
    print("temporal frequency channel   F-measure   params")

    def mark(on: bool) -> str:
        return "✓" if on else " "

    for row, flags in zip(rows, ABLATION_ORDER):
        line = (
            f"   {mark(row.temporal)}        {mark(row.frequency)}        {mark(row.channel)}"
            f"      {row.f_measure:8.4f}  {row.param_count:8d}"
        )
        if mask is not None and flags == mask:
            line += "  <-- requested"
        print(line)
    if args.out:
        payload = [dataclasses.asdict(row) for row in rows]
        data_io.atomic_write_text(args.out, json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    result = gradcheck.run_suite(seed=args.seed, instances=args.instances)
    print(
        f"{'PASS' if result.passed else 'FAIL'}: max relative error "
        f"{result.max_rel_error:.3e} over {result.instances} instances "
        f"({result.checked_values} values, {result.elapsed_s:.1f}s)"
    )
    return 0 if result.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beatkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--pieces", type=int, default=None)
    p.add_argument("--frame-rate", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--test-fold", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--log", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="decode beat files from features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--features", nargs="*", default=None)
    p.add_argument("--frame-rate", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--beats-only", action="store_true")
    p.add_argument("--min-bpm", type=float, default=None)
    p.add_argument("--max-bpm", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score estimates against references")
    p.add_argument("estimates")
    p.add_argument("references")
    p.add_argument("--no-trim", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score all sub-module combinations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--test-fold", type=int, required=True)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--ablate-mask", default=None, help="comma list from {t,f,c} to highlight")
    p.add_argument("--min-bpm", type=float, default=None)
    p.add_argument("--max-bpm", type=float, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=25)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BeatkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
