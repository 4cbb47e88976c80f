"""Metric implementations checked against independent brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from melodygan.data import AlignedRecord, ValueTables, default_value_tables
from melodygan.errors import ConfigurationError, DataValidationError
from melodygan.metrics import (AttributeStats, ConditioningBaselines,
                               KernelSpec, align_reference, attribute_metrics,
                               attribute_values, bleu_score,
                               compute_metric_report, conditioning_baselines,
                               conditioning_distance, median_heuristic_bandwidth,
                               melody_tokens, mmd_by_attribute, mmd_unbiased,
                               self_bleu, transition_distribution)

TABLES = default_value_tables()


def toy_record(song_id: str, pitch, duration=None, rest=None) -> AlignedRecord:
    length = len(pitch)
    duration = duration if duration is not None else [0] * length
    rest = rest if rest is not None else [0] * length
    return AlignedRecord(song_id=song_id, syllable_tokens=("x",) * length,
                         pitch_idx=pitch, duration_idx=duration, rest_idx=rest)


# ---------------------------------------------------------------------------
# oracles: deliberately plain re-implementations with explicit loops


def oracle_bleu(hypothesis, references, max_n=4, eps=1e-9):
    hyp = list(hypothesis)
    c = len(hyp)
    if c == 0:
        return 0.0
    product = 1.0
    for n in range(1, max_n + 1):
        total = c - n + 1
        if total <= 0:
            product *= eps ** (1.0 / max_n)
            continue
        hyp_grams = [tuple(hyp[i:i + n]) for i in range(total)]
        hits = 0.0
        for gram in set(hyp_grams):
            count = hyp_grams.count(gram)
            best = 0
            for ref in references:
                ref = list(ref)
                ref_grams = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
                best = max(best, ref_grams.count(gram))
            hits += min(count, best)
        hits = max(hits, eps)
        product *= (hits / total) ** (1.0 / max_n)
    lengths = sorted((abs(len(list(r)) - c), len(list(r))) for r in references)
    closest = lengths[0][1]
    bp = 1.0 if c > closest else math.exp(1.0 - closest / c)
    return bp * product


def oracle_mmd(x, y, sigma):
    m, n = len(x), len(y)

    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * sigma * sigma))

    xx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return xx + yy - 2 * xy


def oracle_stats(records, tables):
    rep2, rep3, span, uniq, avg_rest, no_rest, length = [], [], [], [], [], [], []
    for rec in records:
        midi = [tables.pitch_midi[i] for i in rec.pitch_idx]
        durs = [tables.duration_beats[i] for i in rec.duration_idx]
        rests = [tables.rest_beats[i] for i in rec.rest_idx]
        for target, n in ((rep2, 2), (rep3, 3)):
            seen, repeats = [], 0
            for i in range(len(midi) - n + 1):
                gram = tuple(midi[i:i + n])
                if gram in seen:
                    repeats += 1
                else:
                    seen.append(gram)
            target.append(repeats)
        span.append(max(midi) - min(midi))
        uniq.append(len(set(midi)))
        avg_rest.append(sum(rests) / len(rests))
        no_rest.append(sum(1 for r in rests if r == 0.0))
        length.append(sum(durs) + sum(rests))
    mean = lambda v: sum(v) / len(v)
    return (mean(rep2), mean(rep3), mean(span), mean(uniq), mean(avg_rest),
            mean(no_rest), mean(length))


def oracle_transitions(records, tables, clamp=24):
    counts = [0.0] * (2 * clamp + 1)
    for rec in records:
        midi = [tables.pitch_midi[i] for i in rec.pitch_idx]
        for a, b in zip(midi, midi[1:]):
            step = int(b - a)
            step = max(-clamp, min(clamp, step))
            counts[step + clamp] += 1.0
    total = sum(counts)
    return [c / total for c in counts]


# ---------------------------------------------------------------------------


class TestBleu:
    def test_identical_is_one(self):
        seq = [3, 1, 4, 1, 5, 9, 2, 6]
        assert bleu_score(seq, [seq]) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_is_epsilon_small(self):
        hyp = [1] * 20
        ref = [2] * 20
        assert bleu_score(hyp, [ref]) < 1e-9

    def test_empty_hypothesis_scores_zero(self):
        assert bleu_score([], [[1, 2, 3]]) == 0.0

    def test_no_references_rejected(self):
        with pytest.raises(ConfigurationError):
            bleu_score([1, 2], [])

    def test_clipping_limits_repeated_hits(self):
        # hypothesis repeats a unigram more often than any reference has it
        hyp = [7, 7, 7, 7]
        ref = [7, 1, 2, 3]
        assert bleu_score(hyp, [ref], max_n=1) == pytest.approx(0.25, abs=1e-12)

    def test_brevity_penalty_closest_length_tie_prefers_shorter(self):
        hyp = [1, 2, 3, 4]  # c = 4; refs of length 3 and 5 tie on distance
        refs = [[1, 2, 3], [1, 2, 3, 4, 5]]
        # closest = 3, and c > closest so no penalty applies
        expected = oracle_bleu(hyp, refs)
        assert bleu_score(hyp, refs) == pytest.approx(expected, abs=1e-12)
        # reversed case: c shorter than the closest reference
        short = bleu_score([1, 2, 3], [[1, 2, 3, 4]])
        assert short == pytest.approx(oracle_bleu([1, 2, 3], [[1, 2, 3, 4]]),
                                      abs=1e-12)
        assert short < 1.0

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            vocab = int(rng.integers(2, 6))
            hyp = rng.integers(0, vocab, size=int(rng.integers(1, 15))).tolist()
            refs = [rng.integers(0, vocab, size=int(rng.integers(1, 15))).tolist()
                    for _ in range(int(rng.integers(1, 5)))]
            expected = oracle_bleu(hyp, refs)
            assert bleu_score(hyp, refs) == pytest.approx(expected, abs=1e-9)

    def test_self_bleu_identical_corpus_is_one(self):
        melodies = [[1, 2, 3, 4]] * 5
        assert self_bleu(melodies) == pytest.approx(1.0, abs=1e-12)

    def test_self_bleu_matches_leave_one_out_mean(self):
        rng = np.random.default_rng(3)
        melodies = [rng.integers(0, 4, size=10).tolist() for _ in range(6)]
        expected = np.mean([oracle_bleu(melodies[i], melodies[:i] + melodies[i + 1:])
                            for i in range(6)])
        assert self_bleu(melodies) == pytest.approx(float(expected), abs=1e-9)

    def test_self_bleu_needs_two(self):
        with pytest.raises(ConfigurationError):
            self_bleu([[1, 2, 3]])


class TestMmd:
    def test_identical_samples_gives_small_negative(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(10, 3))
        value = mmd_unbiased(x, x.copy(), KernelSpec(bandwidth=1.0))
        assert value < 0.0
        assert abs(value) <= 2.0 / 10

    def test_two_tight_clusters_approach_two(self):
        x = np.zeros((8, 2))
        y = np.full((8, 2), 100.0)
        value = mmd_unbiased(x, y, KernelSpec(bandwidth=1.0))
        assert value == pytest.approx(2.0, abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            m = int(rng.integers(2, 9))
            n = int(rng.integers(2, 9))
            d = int(rng.integers(1, 5))
            x = rng.normal(size=(m, d))
            y = rng.normal(size=(n, d)) + rng.normal()
            sigma = float(rng.uniform(0.5, 3.0))
            expected = oracle_mmd(x.tolist(), y.tolist(), sigma)
            actual = mmd_unbiased(x, y, KernelSpec(bandwidth=sigma))
            assert actual == pytest.approx(expected, abs=1e-12)

    def test_median_heuristic_hand_value(self):
        pooled = np.array([[0.0], [1.0], [3.0]])
        # pairwise distances 1, 3, 2 -> median 2
        assert median_heuristic_bandwidth(pooled) == pytest.approx(2.0, abs=1e-12)

    def test_median_heuristic_zero_falls_back_to_one(self):
        pooled = np.zeros((4, 2))
        assert median_heuristic_bandwidth(pooled) == 1.0

    def test_median_heuristic_used_when_requested(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 2))
        y = rng.normal(size=(7, 2))
        sigma = median_heuristic_bandwidth(np.vstack([x, y]))
        auto = mmd_unbiased(x, y, KernelSpec())
        manual = mmd_unbiased(x, y, KernelSpec(bandwidth=sigma))
        assert auto == pytest.approx(manual, abs=1e-15)

    def test_input_validation(self):
        good = np.zeros((3, 2))
        with pytest.raises(ConfigurationError):
            mmd_unbiased(good, np.zeros((3, 3)))
        with pytest.raises(ConfigurationError):
            mmd_unbiased(np.zeros((1, 2)), good)
        with pytest.raises(ConfigurationError):
            mmd_unbiased(np.zeros(3), good)

    def test_kernel_spec_validation(self):
        with pytest.raises(ConfigurationError):
            KernelSpec(kind="laplacian")
        with pytest.raises(ConfigurationError):
            KernelSpec(bandwidth=0.0)
        with pytest.raises(ConfigurationError):
            KernelSpec(bandwidth="mean_heuristic")

    def test_mmd_by_attribute_sums_overall(self):
        rng = np.random.default_rng(11)
        make = lambda i: toy_record(
            f"g{i}", rng.integers(0, 100, 8).tolist(),
            rng.integers(0, 12, 8).tolist(), rng.integers(0, 7, 8).tolist())
        gen = [make(i) for i in range(5)]
        ref = [make(100 + i) for i in range(6)]
        out = mmd_by_attribute(gen, ref, TABLES, KernelSpec(bandwidth=2.0))
        assert out["overall"] == pytest.approx(
            out["pitch"] + out["duration"] + out["rest"], abs=1e-15)


class TestAttributeValues:
    def test_maps_indices_through_tables(self):
        rec = toy_record("a", [0, 99], [0, 11], [0, 6])
        np.testing.assert_array_equal(attribute_values([rec], TABLES, "pitch"),
                                      [[21.0, 120.0]])
        np.testing.assert_array_equal(attribute_values([rec], TABLES, "duration"),
                                      [[0.125, 4.0]])
        np.testing.assert_array_equal(attribute_values([rec], TABLES, "rest"),
                                      [[0.0, 4.0]])

    def test_out_of_range_index_names_record(self):
        rec = toy_record("bad-song", [0, 100])
        with pytest.raises(DataValidationError) as err:
            attribute_values([rec], TABLES, "pitch")
        assert "bad-song" in str(err.value)


class TestAttributeStats:
    def test_alternating_pitch_hand_values(self):
        # a,b,a,b,... over 20 positions: 19 bigrams with 2 distinct -> 17
        # repeats; 18 trigrams with 2 distinct -> 16 repeats
        pitch = [39, 41] * 10
        rec = toy_record("alt", pitch, [5] * 20, [0] * 20)
        stats = attribute_metrics([rec], TABLES)
        assert stats.two_midi_repetitions == 17.0
        assert stats.three_midi_repetitions == 16.0
        assert stats.midi_span == 2.0
        assert stats.unique_midi_count == 2.0
        assert stats.avg_rest_value == 0.0
        assert stats.notes_without_rest == 20.0
        assert stats.song_length == 20.0  # twenty quarter-plus... 20 x 1.0 beat

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            length = int(rng.integers(2, 12))
            records = [toy_record(f"r{i}", rng.integers(0, 100, length).tolist(),
                                  rng.integers(0, 12, length).tolist(),
                                  rng.integers(0, 7, length).tolist())
                       for i in range(int(rng.integers(1, 8)))]
            expected = oracle_stats(records, TABLES)
            actual = attribute_metrics(records, TABLES)
            for got, want in zip(
                    (actual.two_midi_repetitions, actual.three_midi_repetitions,
                     actual.midi_span, actual.unique_midi_count,
                     actual.avg_rest_value, actual.notes_without_rest,
                     actual.song_length), expected):
                assert got == pytest.approx(want, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            attribute_metrics([], TABLES)


class TestTransitions:
    def test_bin_layout_and_clamping(self):
        # index 0 into the pitch table is MIDI 21, index 99 is MIDI 120: the
        # +-99 jumps clamp into the edge bins
        rec = toy_record("jump", [0, 99, 0])
        hist = transition_distribution([rec], TABLES)
        assert hist.shape == (49,)
        assert hist[48] == 0.5  # +24 bin
        assert hist[0] == 0.5   # -24 bin

    def test_center_bin_is_zero_interval(self):
        rec = toy_record("flat", [50, 50, 50])
        hist = transition_distribution([rec], TABLES)
        assert hist[24] == 1.0
        assert hist.sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_oracle_on_random_corpora(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            length = int(rng.integers(2, 15))
            records = [toy_record(f"r{i}", rng.integers(0, 100, length).tolist())
                       for i in range(int(rng.integers(1, 6)))]
            expected = oracle_transitions(records, TABLES)
            actual = transition_distribution(records, TABLES)
            np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_single_position_rejected(self):
        with pytest.raises(ConfigurationError):
            transition_distribution([toy_record("one", [5])], TABLES)


class TestAlignment:
    def test_reorders_to_generated_order(self):
        ref = [toy_record("a", [1, 2]), toy_record("b", [3, 4]),
               toy_record("c", [5, 6])]
        gen = [toy_record("c", [0, 0]), toy_record("a", [0, 0])]
        aligned = align_reference(gen, ref)
        assert [r.song_id for r in aligned] == ["c", "a"]

    def test_missing_song_reported(self):
        with pytest.raises(ConfigurationError) as err:
            align_reference([toy_record("zz", [1])], [toy_record("a", [1])])
        assert "zz" in str(err.value)

    def test_duplicate_reference_id_rejected(self):
        ref = [toy_record("a", [1]), toy_record("a", [2])]
        with pytest.raises(ConfigurationError):
            align_reference([toy_record("a", [1])], ref)


class TestConditioning:
    def test_identical_distance_is_zero(self):
        recs = [toy_record(f"s{i}", [1] * 4, [3] * 4, [2] * 4) for i in range(3)]
        assert conditioning_distance(recs, recs, "duration", TABLES) == 0.0

    def test_known_offset(self):
        # duration index 1 -> 0.25 beats, index 4 -> 0.75: gap 0.5 everywhere
        gen = [toy_record("s", [0] * 6, [1] * 6, [0] * 6)]
        ref = [toy_record("s", [0] * 6, [4] * 6, [0] * 6)]
        assert conditioning_distance(gen, ref, "duration", TABLES) == \
            pytest.approx(0.5, abs=1e-12)

    def test_baselines_exact_counts_and_determinism(self):
        rng = np.random.default_rng(7)
        ref = [toy_record(f"s{i}", [0] * 5, rng.integers(0, 12, 5).tolist(),
                          rng.integers(0, 7, 5).tolist()) for i in range(6)]
        gen = [toy_record(f"s{i}", [0] * 5, rng.integers(0, 12, 5).tolist(),
                          rng.integers(0, 7, 5).tolist()) for i in range(6)]
        a = conditioning_baselines(gen, ref, "duration", TABLES,
                                   num_samples=500, seed=3)
        b = conditioning_baselines(gen, ref, "duration", TABLES,
                                   num_samples=500, seed=3)
        assert set(a.samples) == {"rs", "rn", "rns"}
        for key in a.samples:
            assert a.samples[key].shape == (500,)
            np.testing.assert_array_equal(a.samples[key], b.samples[key])
            assert 0.0 <= a.quantiles[key] <= 1.0
        c = conditioning_baselines(gen, ref, "duration", TABLES,
                                   num_samples=500, seed=4)
        assert not np.array_equal(a.samples["rs"], c.samples["rs"])

    def test_rn_preserves_multiset_per_song(self):
        # a position permutation cannot change a song's value multiset, so
        # with constant-value songs rn distances all equal the observed d
        gen = [toy_record(f"s{i}", [0] * 4, [i] * 4, [0] * 4) for i in range(4)]
        ref = [toy_record(f"s{i}", [0] * 4, [i + 4] * 4, [0] * 4) for i in range(4)]
        out = conditioning_baselines(gen, ref, "duration", TABLES,
                                     num_samples=50, seed=0)
        np.testing.assert_allclose(out.samples["rn"], out.distance, atol=1e-12)
        assert out.quantiles["rn"] == pytest.approx(0.5, abs=1e-12)

    def test_quantile_midrank_math(self):
        baselines = ConditioningBaselines(
            attribute="duration", distance=2.0, num_samples=4,
            samples={"rs": np.array([0.0, 1.0, 2.0, 3.0])})
        assert baselines.quantiles["rs"] == pytest.approx((2 + 0.5) / 4, abs=1e-15)
        assert baselines.means["rs"] == pytest.approx(1.5, abs=1e-15)

    def test_rs_baseline_mean_tracks_expected_mixture(self):
        # eight constant-valued songs, generated = reference so d = 0; each
        # rs slot draws a uniform song, giving E[d_rs] = mean_i mean_j |v_i - v_j|
        gen = [toy_record(f"s{i}", [0] * 4, [i] * 4, [0] * 4) for i in range(8)]
        out = conditioning_baselines(gen, gen, "duration", TABLES,
                                     num_samples=4000, seed=2)
        values = np.array(TABLES.duration_beats[:8])
        expected = float(np.mean(np.abs(values[:, None] - values[None, :])))
        assert out.distance == 0.0
        assert out.means["rs"] == pytest.approx(expected, rel=0.05)
        assert out.quantiles["rs"] < 0.05

    def test_invalid_sample_count(self):
        recs = [toy_record("a", [0] * 3), toy_record("b", [0] * 3)]
        with pytest.raises(ConfigurationError):
            conditioning_baselines(recs, recs, "duration", TABLES, num_samples=0)


class TestReport:
    def test_full_report_structure(self):
        rng = np.random.default_rng(13)
        make = lambda i: toy_record(
            f"s{i}", rng.integers(0, 100, 6).tolist(),
            rng.integers(0, 12, 6).tolist(), rng.integers(0, 7, 6).tolist())
        ref = [make(i) for i in range(8)]
        gen = [toy_record(r.song_id, rng.integers(0, 100, 6).tolist(),
                          rng.integers(0, 12, 6).tolist(),
                          rng.integers(0, 7, 6).tolist()) for r in ref[:5]]
        report = compute_metric_report(gen, ref, TABLES,
                                       KernelSpec(bandwidth=3.0),
                                       baseline_samples=50, seed=0)
        payload = report.to_dict()
        assert payload["mmd"]["overall"] == pytest.approx(
            payload["mmd"]["pitch"] + payload["mmd"]["duration"]
            + payload["mmd"]["rest"], abs=1e-15)
        assert set(payload["conditioning"]) == {"duration", "rest"}
        for attr in ("duration", "rest"):
            entry = payload["conditioning"][attr]
            assert entry["num_samples"] == 50
            assert set(entry["baseline_quantiles"]) == {"rs", "rn", "rns"}
        assert len(payload["transition_histogram"]) == 49
        json_once = report.to_json()
        assert json_once == report.to_json()

    def test_melody_tokens_fuse_positionwise(self):
        rec = toy_record("a", [1, 2], [3, 4], [5, 6])
        assert melody_tokens([rec]) == [((1, 3, 5), (2, 4, 6))]
