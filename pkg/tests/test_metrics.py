"""F-measure matching vs. bipartite oracle, continuity scores, metric levels."""

import numpy as np
import pytest

from beatkit.metrics import (
    aml_scores,
    continuity_scores,
    evaluate_dataset,
    evaluate_pair,
    f_measure,
    metric_variations,
    trim_beats,
)
from beatkit.sequences import BeatSequence


def seq(*times):
    return BeatSequence(np.asarray(times, dtype=float))


def grid(start, step, count):
    return BeatSequence(start + step * np.arange(count))


# ---------------------------------------------------------------------------
# maximum bipartite matching oracle (augmenting paths)


def max_matching(est, ref, window):
    adj = [
        [j for j in range(len(ref)) if abs(est[i] - ref[j]) <= window]
        for i in range(len(est))
    ]
    match_ref = [-1] * len(ref)

    def augment(i, seen):
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if match_ref[j] < 0 or augment(match_ref[j], seen):
                match_ref[j] = i
                return True
        return False

    count = 0
    for i in range(len(est)):
        if augment(i, [False] * len(ref)):
            count += 1
    return count


# ---------------------------------------------------------------------------
# f-measure


def test_f_measure_perfect():
    s = seq(1.0, 2.0, 3.5)
    f, matched, n_est, n_ref = f_measure(s, s)
    assert f == 1.0 and matched == 3 and n_est == n_ref == 3


def test_f_measure_shifted_beyond_window():
    ref = grid(0.0, 0.5, 10)
    est = BeatSequence(ref.times + 0.1)
    f, matched, _, _ = f_measure(est, ref)
    assert f == 0.0 and matched == 0


def test_f_measure_hand_case():
    f, matched, n_est, n_ref = f_measure(seq(1.05, 2.5), seq(1.0, 2.0, 3.0))
    assert matched == 1 and n_est == 2 and n_ref == 3
    assert f == pytest.approx(0.4)
    assert matched == max_matching([1.05, 2.5], [1.0, 2.0, 3.0], 0.07)


def test_f_measure_empty_cases():
    empty = seq()
    assert f_measure(empty, empty)[0] == 1.0
    assert f_measure(empty, seq(1.0))[0] == 0.0
    assert f_measure(seq(1.0), empty)[0] == 0.0


def test_f_measure_self_identity_property():
    rng = np.random.default_rng(9)
    for _ in range(100):
        times = np.unique(np.sort(rng.uniform(0, 30, size=int(rng.integers(1, 20)))))
        s = BeatSequence(times)
        assert f_measure(s, s)[0] == 1.0


def test_f_measure_window_monotone():
    rng = np.random.default_rng(0)
    for _ in range(50):
        est = BeatSequence(np.sort(rng.uniform(0, 10, size=rng.integers(1, 10))))
        ref = BeatSequence(np.sort(rng.uniform(0, 10, size=rng.integers(1, 10))))
        previous = -1.0
        for window in (0.01, 0.05, 0.2, 1.0):
            f, _, _, _ = f_measure(est, ref, window)
            assert f >= previous - 1e-12
            previous = f


def test_f_measure_matches_bipartite_oracle():
    rng = np.random.default_rng(1)
    for _ in range(500):
        n_est = int(rng.integers(0, 13))
        n_ref = int(rng.integers(0, 13))
        est_times = np.sort(rng.uniform(0.0, 6.0, size=n_est))
        ref_times = np.sort(rng.uniform(0.0, 6.0, size=n_ref))
        est_times = np.unique(est_times)
        ref_times = np.unique(ref_times)
        window = float(rng.choice([0.02, 0.07, 0.3]))
        _, matched, _, _ = f_measure(BeatSequence(est_times), BeatSequence(ref_times), window)
        assert matched == max_matching(est_times.tolist(), ref_times.tolist(), window)


# ---------------------------------------------------------------------------
# continuity


def test_continuity_perfect():
    ref = grid(0.0, 0.5, 12)
    assert continuity_scores(ref, ref) == (1.0, 1.0)


def test_continuity_double_period_estimate_scores_zero():
    ref = grid(0.0, 0.5, 12)
    est = BeatSequence(ref.times[::2])
    cml_c, cml_t = continuity_scores(est, ref)
    assert cml_c == 0.0 and cml_t == 0.0


def test_continuity_one_bad_insertion():
    # ten correct estimates plus one inserted mid-way: the insertion breaks
    #  its own phase check and the following estimate's interval check
    ref = grid(0.0, 0.5, 10)
    est_times = np.sort(np.append(ref.times, 2.25))
    cml_c, cml_t = continuity_scores(BeatSequence(est_times), ref)
    assert cml_t == pytest.approx(9 / 10)
    assert cml_c == pytest.approx(5 / 10)


def oracle_runs(flags):
    best = run = 0
    for ok in flags:
        run = run + 1 if ok else 0
        best = max(best, run)
    return best, sum(flags)


def test_continuity_run_scan_against_oracle():
    rng = np.random.default_rng(2)
    ref = grid(0.0, 0.5, 20)
    for _ in range(100):
        noise = rng.choice([0.0, 0.3], size=20, p=[0.8, 0.2])
        est = BeatSequence(np.sort(ref.times + noise * rng.uniform(0.5, 1.0, size=20)))
        from beatkit.metrics import _correct_flags

        flags = _correct_flags(est.times, ref.times, 0.175)
        best_run, total = oracle_runs(flags.tolist())
        cml_c, cml_t = continuity_scores(est, ref)
        assert cml_c == pytest.approx(min(best_run / 20, 1.0))
        assert cml_t == pytest.approx(min(total / 20, 1.0))


def test_continuity_needs_two_references():
    with pytest.raises(ValueError):
        continuity_scores(seq(1.0), seq(1.0))


def test_continuity_empty_estimate():
    assert continuity_scores(seq(), grid(0.0, 0.5, 4)) == (0.0, 0.0)


# ---------------------------------------------------------------------------
# metric variations


def test_variations_uniform_grid():
    ref = grid(0.0, 0.5, 5)
    variants = metric_variations(ref)
    assert np.allclose(variants[0].times, ref.times)
    assert np.allclose(variants[1].times, ref.times[:-1] + 0.25)  # off-beat
    assert np.allclose(variants[2].times, np.arange(9) * 0.25)  # double
    assert np.allclose(variants[3].times, [0.0, 1.0, 2.0])  # half (odd beats)
    assert np.allclose(variants[4].times, [0.5, 1.5])  # half (even beats)


def test_variations_double_of_integer_grid():
    out = metric_variations(seq(0.0, 1.0, 2.0))[2]
    assert np.allclose(out.times, [0.0, 0.5, 1.0, 1.5, 2.0])


def test_variations_half_split():
    variants = metric_variations(seq(0.0, 1.0, 2.0, 3.0))
    assert np.allclose(variants[3].times, [0.0, 2.0])
    assert np.allclose(variants[4].times, [1.0, 3.0])


def test_variations_self_continuity():
    ref = grid(0.0, 0.4, 10)
    for variant in metric_variations(ref):
        if len(variant) >= 2:
            assert continuity_scores(variant, variant) == (1.0, 1.0)


def test_variations_too_short():
    with pytest.raises(ValueError):
        metric_variations(seq(1.0))


# ---------------------------------------------------------------------------
# AML


def test_aml_double_tempo_estimate():
    ref = grid(0.0, 0.5, 10)
    est = metric_variations(ref)[2]  # double tempo
    cml_c, cml_t = continuity_scores(est, ref)
    aml_c, aml_t = aml_scores(est, ref)
    assert cml_t == 0.0
    assert aml_t >= 0.99


def test_aml_identity():
    ref = grid(0.0, 0.5, 8)
    assert aml_scores(ref, ref) == (1.0, 1.0)


def test_aml_far_estimate_scores_zero():
    ref = grid(0.0, 0.5, 8)
    est = BeatSequence(ref.times + 0.23)  # off everything incl. off-beat variant
    rng = np.random.default_rng(3)
    far = BeatSequence(np.sort(rng.uniform(100.0, 200.0, size=6)))
    assert aml_scores(far, ref)[1] == 0.0


def test_ordering_invariants_fuzz():
    rng = np.random.default_rng(4)
    for _ in range(500):
        n_ref = int(rng.integers(2, 15))
        n_est = int(rng.integers(0, 15))
        ref = BeatSequence(np.unique(np.sort(rng.uniform(0, 12, size=n_ref))))
        if len(ref) < 2:
            continue
        est = BeatSequence(np.unique(np.sort(rng.uniform(0, 12, size=n_est))))
        cml_c, cml_t = continuity_scores(est, ref)
        aml_c, aml_t = aml_scores(est, ref)
        assert 0.0 <= cml_c <= cml_t <= aml_t <= 1.0
        assert cml_c <= aml_c <= aml_t


# ---------------------------------------------------------------------------
# reports


def test_trim_drops_early_events():
    s = seq(1.0, 4.9, 5.0, 7.5)
    assert np.allclose(trim_beats(s).times, [5.0, 7.5])


def test_evaluate_pair_identity():
    ref = grid(5.0, 0.5, 20)
    report = evaluate_pair(ref, ref)
    assert report.f_measure == 1.0
    assert report.cml_t == 1.0
    assert report.aml_t == 1.0


def test_evaluate_dataset_single_equals_pair():
    ref = grid(5.0, 0.5, 10)
    single = evaluate_dataset([(ref, ref)])
    assert single.f_measure == 1.0
    assert len(single.per_piece) == 1


def test_evaluate_dataset_mean():
    ref = grid(5.0, 0.5, 10)
    miss = BeatSequence(ref.times + 0.2)
    agg = evaluate_dataset([(ref, ref), (miss, ref)])
    assert agg.f_measure == pytest.approx(0.5)


def test_evaluate_dataset_empty_rejected():
    with pytest.raises(ValueError):
        evaluate_dataset([])
