"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS/FAIL line so the whole gate reads off a single
``pytest -s tests/test_acceptance.py`` run. Thresholds live next to the
asserts; nothing is deferred to later calibration.
"""

import time

import numpy as np
import pytest

from beatkit.data_io import SynthSpec, generate_synthetic
from beatkit.dbn import BeatStateSpace, DbnConfig, pick_peaks, viterbi_decode, viterbi_path
from beatkit.classifier import widen_labels
from beatkit.gradcheck import run_suite
from beatkit.metrics import (
    aml_scores,
    continuity_scores,
    evaluate_dataset,
    f_measure,
    metric_variations,
)
from beatkit.msam import msam_forward
from beatkit.sequences import BeatSequence
from beatkit.train import TrainConfig, run_ablation, track_manifest_fold, train_model

from test_dbn import config_for_intervals, enumerate_best_path
from test_metrics import max_matching
from test_msam import oracle_msam, small_params, random_tensor


def report(ok: bool, name: str, detail: str) -> None:
    print(f"\n{'PASS' if ok else 'FAIL'}: {name} ({detail})")


# ---------------------------------------------------------------------------


def test_gradient_suite():
    result = run_suite(seed=7, instances=100)
    ok = result.passed and result.elapsed_s < 120.0
    report(
        ok,
        "gradient suite",
        f"max rel err {result.max_rel_error:.2e} over {result.instances} instances, "
        f"{result.checked_values} values, {result.elapsed_s:.1f}s",
    )
    assert result.max_rel_error <= 1e-4
    assert result.elapsed_s < 120.0
    assert result.instances >= 100


def test_msam_forward_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        f = int(rng.integers(1, 4))
        t = int(rng.integers(1, 5))
        params = small_params(rng, n, f)
        h = random_tensor(rng, n, f, t)
        out, _, _ = msam_forward(h, params)
        worst = max(worst, float(np.max(np.abs(out.data - oracle_msam(h, params)))))
    ok = worst <= 1e-10
    report(ok, "msam duplicate-implementation oracle", f"max abs diff {worst:.2e} over 50 instances")
    assert ok


def test_viterbi_oracle():
    rng = np.random.default_rng(23)
    cases = 0
    start = time.monotonic()
    while cases < 200:
        tau_min = int(rng.integers(3, 7))
        tau_max = tau_min + int(rng.integers(0, 3))
        cfg = config_for_intervals(
            tau_min,
            tau_max,
            observation_lambda=float(rng.choice([2.0, 4.0, 8.0, 16.0])),
            transition_lambda=float(rng.uniform(1.0, 80.0)),
        )
        space = BeatStateSpace(cfg)
        if space.num_states > 40:
            continue
        t = int(rng.integers(1, 13))
        act = rng.uniform(size=t)
        if cases % 9 == 0:
            act = np.full(t, float(rng.choice([0.0, 0.5, 1.0])))  # force ties
        path, score = viterbi_path(act, cfg)
        ref_path, ref_score = enumerate_best_path(space, act)
        assert score == ref_score, (tau_min, tau_max, t)
        assert np.array_equal(path, ref_path), (tau_min, tau_max, t)
        cases += 1
    report(True, "viterbi exhaustive-path oracle", f"{cases} cases, {time.monotonic()-start:.1f}s")


def test_metrics_matching_oracle():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        est = np.unique(np.sort(rng.uniform(0.0, 6.0, size=int(rng.integers(0, 13)))))
        ref = np.unique(np.sort(rng.uniform(0.0, 6.0, size=int(rng.integers(0, 13)))))
        window = float(rng.choice([0.02, 0.07, 0.3]))
        _, matched, _, _ = f_measure(BeatSequence(est), BeatSequence(ref), window)
        assert matched == max_matching(est.tolist(), ref.tolist(), window)
    report(True, "greedy matching equals maximum bipartite matching", "1000 instances")


def test_metrics_ordering_invariants():
    rng = np.random.default_rng(37)
    checked = 0
    for _ in range(10_000):
        ref = BeatSequence(np.unique(np.sort(rng.uniform(0, 12, size=int(rng.integers(2, 14))))))
        if len(ref) < 2:
            continue
        est = BeatSequence(np.unique(np.sort(rng.uniform(0, 12, size=int(rng.integers(0, 14))))))
        cml_c, cml_t = continuity_scores(est, ref)
        aml_c, aml_t = aml_scores(est, ref)
        assert 0.0 <= cml_c <= cml_t <= aml_t <= 1.0, (cml_c, cml_t, aml_t)
        assert cml_c <= aml_c <= aml_t, (cml_c, aml_c, aml_t)
        checked += 1
    report(True, "metric ordering invariants", f"{checked} fuzzed inputs")


def test_metrics_double_tempo_levels():
    rng = np.random.default_rng(41)
    worst_aml = 1.0
    for _ in range(25):
        step = float(rng.uniform(0.3, 1.0))
        start = float(rng.uniform(0.0, 2.0))
        count = int(rng.integers(6, 30))
        ref = BeatSequence(start + step * np.arange(count))
        est = metric_variations(ref)[2]  # double tempo
        _, cml_t = continuity_scores(est, ref)
        _, aml_t = aml_scores(est, ref)
        assert cml_t == 0.0
        worst_aml = min(worst_aml, aml_t)
    ok = worst_aml >= 0.99
    report(ok, "double-tempo estimates", f"cml_t = 0 on all grids, min aml_t {worst_aml:.3f}")
    assert ok


def test_label_widening_oracle():
    rng = np.random.default_rng(43)

    def oracle(frames, t):
        target = np.zeros(t)
        for j in range(t):
            for k in frames:
                if j == k:
                    target[j] = max(target[j], 1.0)
                elif abs(j - k) == 1:
                    target[j] = max(target[j], 0.5)
                elif abs(j - k) == 2:
                    target[j] = max(target[j], 0.25)
        return target

    for _ in range(1000):
        t = int(rng.integers(1, 60))
        count = int(rng.integers(0, min(t, 10) + 1))
        frames = sorted(rng.choice(t, size=count, replace=False).tolist())
        assert np.array_equal(widen_labels(frames, t), oracle(frames, t))
    report(True, "label widening vs brute-force oracle", "1000 random beat lists")


def test_dbn_benefit_over_peak_picking():
    margins = []
    for seed in (0, 1, 2):
        rng = np.random.default_rng(seed)
        fps, t, period = 100.0, 6000, 50
        spikes = np.arange(0, t, period)
        truth = BeatSequence((spikes + 0.5) / fps)
        background = 0.02
        act = np.full(t, background)
        act[spikes] = 0.95
        dropped = rng.choice(len(spikes), size=len(spikes) // 5, replace=False)
        act[spikes[dropped]] = background  # dropout: spike removed from the curve
        cfg = DbnConfig(frame_rate_hz=fps)
        f_dbn, *_ = f_measure(viterbi_decode(act, cfg), truth)
        f_pp, *_ = f_measure(pick_peaks(act, fps), truth)
        margins.append(f_dbn - f_pp)
    ok = min(margins) >= 0.05
    report(
        ok,
        "hmm decoding beats threshold peak picking",
        f"margins {', '.join(f'{m:+.3f}' for m in margins)} (need >= +0.05)",
    )
    assert ok


# ---------------------------------------------------------------------------
# end-to-end and ablation (trained on synthetic data)

E2E_SPEC = SynthSpec(
    piece_count=80,
    duration_range_s=(30.0, 60.0),
    bpm_range=(60.0, 180.0),
    noise_sigma=0.05,
    n=4,
    f=16,
    frame_rate_hz=50.0,
    seed=42,
)
TEST_FOLD = 7


def test_end_to_end_synthetic(tmp_path):
    start = time.monotonic()
    manifest = generate_synthetic(E2E_SPEC, tmp_path / "e2e")
    cfg = TrainConfig(seed=42, max_epochs=25)
    checkpoint, log = train_model(manifest, cfg, exclude_folds=(TEST_FOLD,))
    dbn_cfg = DbnConfig(frame_rate_hz=E2E_SPEC.frame_rate_hz)
    rows = track_manifest_fold(checkpoint.params, manifest, TEST_FOLD, dbn_cfg)
    beat = evaluate_dataset([(est, ref) for est, ref, _ in rows])
    down = evaluate_dataset([(est.downbeats(), ref.downbeats()) for est, ref, _ in rows])
    elapsed = time.monotonic() - start
    ok = beat.f_measure >= 0.95 and down.f_measure >= 0.90 and elapsed <= 1800.0
    report(
        ok,
        "end-to-end synthetic",
        f"beat F {beat.f_measure:.4f} (>= 0.95), downbeat F {down.f_measure:.4f} (>= 0.90), "
        f"{len(rows)} held-out pieces, {len(log)} epochs, {elapsed:.0f}s (<= 1800s)",
    )
    assert beat.f_measure >= 0.95
    assert down.f_measure >= 0.90
    assert elapsed <= 1800.0


def test_ablation_direction(tmp_path):
    spec = SynthSpec(
        piece_count=24,
        duration_range_s=(20.0, 35.0),
        bpm_range=(70.0, 160.0),
        noise_sigma=0.05,
        n=4,
        f=16,
        frame_rate_hz=50.0,
        seed=42,
    )
    manifest = generate_synthetic(spec, tmp_path / "ablation")
    cfg = TrainConfig(
        seed=42, max_epochs=40, learning_rate=2e-3, batch_size=8, hidden=64
    )
    rows = run_ablation(manifest, cfg, test_fold=TEST_FOLD)
    by_flags = {(r.temporal, r.frequency, r.channel): r.f_measure for r in rows}
    full = by_flags[(True, True, True)]
    baseline = by_flags[(False, False, False)]
    singles = [
        by_flags[(True, False, False)],
        by_flags[(False, True, False)],
        by_flags[(False, False, True)],
    ]
    ok = all(full >= s for s in singles) and all(s >= baseline for s in singles)
    report(
        ok,
        "ablation direction",
        f"full {full:.4f} >= singles {', '.join(f'{s:.4f}' for s in singles)} >= "
        f"baseline {baseline:.4f}",
    )
    counts = [r.param_count for r in rows]
    assert counts[0] == min(counts) and counts[-1] == max(counts)
    assert len(rows) == 8
    assert ok
