"""Command-line surface: pipeline wiring, exit codes, output determinism."""

import json

import pytest

from beatkit.cli import main
from beatkit.data_io import read_annotations


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small synthetic dataset plus a trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "synth.piece_count": 8,
                "synth.duration_range_s": [8.0, 10.0],
                "synth.bpm_range": [90.0, 150.0],
                "synth.noise_sigma": 0.05,
                "synth.n": 2,
                "synth.f": 8,
                "synth.frame_rate_hz": 25.0,
                "train.hidden": 8,
                "train.attn_dim": 4,
                "train.dilations": [1, 2],
                "train.batch_size": 4,
                "train.clip_seconds": 4.0,
                "train.clip_overlap_seconds": 1.0,
                "train.val_fraction": 0.25,
                "train.learning_rate": 5e-3,
            }
        )
    )
    rc = main(["synth", "--out", str(data), "--seed", "13", "--config", str(config)])
    assert rc == 0
    ckpt = root / "model.ckpt"
    rc = main(
        [
            "train",
            "--manifest",
            str(data / "manifest.json"),
            "--out",
            str(ckpt),
            "--seed",
            "0",
            "--max-epochs",
            "25",
            "--test-fold",
            "7",
            "--log",
            str(root / "train.log"),
            "--config",
            str(config),
        ]
    )
    assert rc == 0
    return root


def test_synth_writes_dataset(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert len(manifest["entries"]) == 8
    assert manifest["frame_rate_hz"] == 25.0


def test_train_log_format(workspace):
    lines = (workspace / "train.log").read_text().strip().splitlines()
    assert lines
    record = json.loads(lines[0])
    assert set(record) == {"epoch", "train_loss", "val_loss", "timestamp"}


def test_track_and_eval_roundtrip(workspace, tmp_path):
    out = tmp_path / "tracked"
    rc = main(
        [
            "track",
            "--checkpoint",
            str(workspace / "model.ckpt"),
            "--manifest",
            str(workspace / "data" / "manifest.json"),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    tracked = sorted(out.iterdir())
    assert len(tracked) == 8
    seq = read_annotations(tracked[0])
    assert len(seq) > 0
    assert seq.positions is not None
    # eval against the ground-truth annotations (trim off: pieces are short)
    rc = main(["eval", str(out), str(workspace / "data"), "--no-trim"])
    assert rc == 0


def test_track_beats_only(workspace, tmp_path):
    out = tmp_path / "beatsonly"
    rc = main(
        [
            "track",
            "--checkpoint",
            str(workspace / "model.ckpt"),
            "--manifest",
            str(workspace / "data" / "manifest.json"),
            "--fold",
            "7",
            "--out",
            str(out),
            "--beats-only",
        ]
    )
    assert rc == 0
    for path in out.iterdir():
        seq = read_annotations(path)
        assert seq.positions is None


def test_track_deterministic(workspace, tmp_path):
    args = [
        "track",
        "--checkpoint",
        str(workspace / "model.ckpt"),
        "--manifest",
        str(workspace / "data" / "manifest.json"),
        "--fold",
        "0",
    ]
    out1, out2 = tmp_path / "t1", tmp_path / "t2"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    for p1 in sorted(out1.iterdir()):
        p2 = out2 / p1.name
        assert p1.read_bytes() == p2.read_bytes()


def test_eval_identical_files_perfect_scores(workspace, tmp_path, capsys):
    ref_dir = workspace / "data"
    rc = main(["eval", str(ref_dir), str(ref_dir), "--no-trim", "--out", str(tmp_path / "r.jsonl")])
    assert rc == 0
    rows = [json.loads(line) for line in (tmp_path / "r.jsonl").read_text().splitlines()]
    mean_row = rows[-1]
    assert mean_row["piece_id"] == "<mean>"
    assert mean_row["f_measure"] == 1.0
    assert mean_row["cml_t"] == 1.0
    assert mean_row["aml_t"] == 1.0


def test_eval_parallel_matches_serial(workspace, tmp_path):
    ref_dir = str(workspace / "data")
    out1, out2 = tmp_path / "serial.jsonl", tmp_path / "parallel.jsonl"
    assert main(["eval", ref_dir, ref_dir, "--no-trim", "--out", str(out1)]) == 0
    assert main(["eval", ref_dir, ref_dir, "--no-trim", "--jobs", "2", "--out", str(out2)]) == 0
    assert out1.read_text() == out2.read_text()


def test_gradcheck_command(capsys):
    rc = main(["gradcheck", "--seed", "0", "--instances", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.startswith("PASS")
    printed = float(out.split("max relative error")[1].split("over")[0].strip())
    assert printed <= 1e-4


def test_eval_missing_path_is_io_error(tmp_path):
    rc = main(["eval", str(tmp_path / "none"), str(tmp_path / "missing")])
    assert rc == 2


def test_bad_config_key_is_validation_error(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"synth.bogus_knob": 1}))
    rc = main(["synth", "--out", str(tmp_path / "d"), "--seed", "1", "--config", str(config)])
    assert rc == 1


def test_ablate_table(workspace, tmp_path, capsys):
    rc = main(
        [
            "ablate",
            "--manifest",
            str(workspace / "data" / "manifest.json"),
            "--seed",
            "0",
            "--test-fold",
            "7",
            "--max-epochs",
            "2",
            "--out",
            str(tmp_path / "ablation.json"),
            "--config",
            str(workspace / "config.json"),
        ]
    )
    assert rc == 0
    rows = json.loads((tmp_path / "ablation.json").read_text())
    assert len(rows) == 8
    flags = [(r["temporal"], r["frequency"], r["channel"]) for r in rows]
    assert flags[0] == (False, False, False)
    assert flags[-1] == (True, True, True)
    counts = [r["param_count"] for r in rows]
    assert counts[0] == min(counts) and counts[-1] == max(counts)
