"""Evaluation suite: corpus diversity (self-BLEU), two-sample discrepancy
(unbiased MMD with a Gaussian RBF kernel), per-melody attribute statistics,
pitch-transition histograms, and a syllable-conditioning distance with
permutation baselines.

Everything here runs in numpy float64 and is deterministic given its inputs
and seeds. Melodies enter either as AlignedRecord lists or as prebuilt
composite token sequences.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import AlignedRecord, ValueTables
from .errors import ConfigurationError, DataValidationError
from .seeding import derive_seed

BLEU_EPSILON = 1e-9
TRANSITION_CLAMP = 24
DEFAULT_BASELINE_SAMPLES = 10000

CONDITIONED_ATTRIBUTES = ("duration", "rest")


# ---------------------------------------------------------------------------
# composite tokens and self-BLEU


def melody_tokens(records) -> list:
    """Fuse the three streams into one (pitch, duration, rest) token per step."""
    return [tuple(zip(r.pitch_idx, r.duration_idx, r.rest_idx)) for r in records]


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_score(hypothesis, references, max_n: int = 4, epsilon: float = BLEU_EPSILON) -> float:
    """Modified n-gram precision BLEU with uniform weights up to max_n.

    Counts are clipped per n-gram by the maximum reference count. A zero
    clipped count contributes `epsilon` hits so the geometric mean stays
    defined. Brevity penalty uses the closest reference length (ties broken
    toward the shorter reference); it is 1 whenever all lengths are equal.
    """
    references = list(references)
    if not references:
        raise ConfigurationError("bleu_score needs at least one reference")
    hyp = tuple(hypothesis)
    c = len(hyp)
    if c == 0:
        return 0.0

    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        total = c - n + 1
        if total <= 0:
            log_precision_sum += math.log(epsilon) / max_n
            continue
        hyp_counts = _ngram_counts(hyp, n)
        max_ref_counts = Counter()
        for ref in references:
            for gram, count in _ngram_counts(tuple(ref), n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        hits = sum(min(count, max_ref_counts.get(gram, 0)) for gram, count in hyp_counts.items())
        log_precision_sum += math.log(max(hits, epsilon) / total) / max_n

    ref_lengths = [len(tuple(ref)) for ref in references]
    closest = min(ref_lengths, key=lambda length: (abs(length - c), length))
    brevity = 1.0 if c > closest else math.exp(1.0 - closest / c)
    return brevity * math.exp(log_precision_sum)


def self_bleu(melodies, max_n: int = 4) -> float:
    """Mean BLEU of each melody against all the others; higher = less diverse."""
    melodies = [tuple(m) for m in melodies]
    if len(melodies) < 2:
        raise ConfigurationError(f"self_bleu needs at least two melodies, got {len(melodies)}")
    scores = []
    for i, hyp in enumerate(melodies):
        references = melodies[:i] + melodies[i + 1:]
        scores.append(bleu_score(hyp, references, max_n=max_n))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# maximum mean discrepancy


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel k(x, y) = exp(-||x - y||^2 / (2 sigma^2)).

    bandwidth is either a positive float or "median_heuristic": the median
    pairwise distance over the pooled sample, falling back to 1.0 when the
    median is zero.
    """

    kind: str = "gaussian_rbf"
    bandwidth: object = "median_heuristic"

    def __post_init__(self):
        if self.kind != "gaussian_rbf":
            raise ConfigurationError(f"unsupported kernel kind {self.kind!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median_heuristic":
                raise ConfigurationError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not (isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0):
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth!r}")


def _pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(sq, 0.0)


def median_heuristic_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise Euclidean distance of the pooled sample (1.0 if zero)."""
    sq = _pairwise_sq_dists(pooled, pooled)
    iu = np.triu_indices(pooled.shape[0], k=1)
    median = float(np.median(np.sqrt(sq[iu])))
    return median if median > 0.0 else 1.0


def mmd_unbiased(x, y, kernel: KernelSpec = KernelSpec()) -> float:
    """Unbiased squared-MMD U-statistic between two samples of row vectors.

    Diagonal (self-pair) terms are excluded from the within-sample sums, so
    the estimate can be slightly negative when the samples match.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ConfigurationError("mmd_unbiased expects 2-D arrays (samples x features)")
    if x.shape[1] != y.shape[1]:
        raise ConfigurationError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    m, n = x.shape[0], y.shape[0]
    if m < 2 or n < 2:
        raise ConfigurationError(f"each sample needs at least 2 rows, got {m} and {n}")

    if isinstance(kernel.bandwidth, str):
        bandwidth = median_heuristic_bandwidth(np.vstack([x, y]))
    else:
        bandwidth = float(kernel.bandwidth)
    denom = 2.0 * bandwidth * bandwidth

    k_xx = np.exp(-_pairwise_sq_dists(x, x) / denom)
    k_yy = np.exp(-_pairwise_sq_dists(y, y) / denom)
    k_xy = np.exp(-_pairwise_sq_dists(x, y) / denom)

    term_x = (k_xx.sum() - np.trace(k_xx)) / (m * (m - 1))
    term_y = (k_yy.sum() - np.trace(k_yy)) / (n * (n - 1))
    return float(term_x + term_y - 2.0 * k_xy.mean())


# ---------------------------------------------------------------------------
# attribute values and statistics


def attribute_values(records, tables: ValueTables, attribute: str) -> np.ndarray:
    """Map one attribute's indices to numeric values; shape (num_records, T)."""
    table = tables.values_for(attribute)
    idx_field = {"pitch": "pitch_idx", "duration": "duration_idx", "rest": "rest_idx"}[attribute]
    rows = []
    for record in records:
        idx = np.asarray(getattr(record, idx_field), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
            raise DataValidationError(
                [f"record {record.song_id!r}: {attribute} index outside the value table"])
        rows.append(table[idx])
    if not rows:
        raise ConfigurationError("need at least one record")
    return np.stack(rows, axis=0)


def mmd_by_attribute(generated, reference, tables: ValueTables,
                     kernel: KernelSpec = KernelSpec()) -> dict:
    """Per-attribute MMD on value vectors, plus their sum under "overall"."""
    result = {}
    for attribute in ("pitch", "duration", "rest"):
        result[attribute] = mmd_unbiased(
            attribute_values(generated, tables, attribute),
            attribute_values(reference, tables, attribute),
            kernel,
        )
    result["overall"] = result["pitch"] + result["duration"] + result["rest"]
    return result


def _repeated_ngram_count(seq, n: int) -> int:
    """Occurrences beyond the first of each n-gram (first sightings are free)."""
    seen = set()
    repeats = 0
    for i in range(len(seq) - n + 1):
        gram = tuple(seq[i:i + n])
        if gram in seen:
            repeats += 1
        else:
            seen.add(gram)
    return repeats


@dataclass(frozen=True)
class AttributeStats:
    """Corpus means of seven per-melody statistics."""

    two_midi_repetitions: float
    three_midi_repetitions: float
    midi_span: float
    unique_midi_count: float
    avg_rest_value: float
    notes_without_rest: float
    song_length: float

    def to_dict(self) -> dict:
        return {
            "two_midi_repetitions": self.two_midi_repetitions,
            "three_midi_repetitions": self.three_midi_repetitions,
            "midi_span": self.midi_span,
            "unique_midi_count": self.unique_midi_count,
            "avg_rest_value": self.avg_rest_value,
            "notes_without_rest": self.notes_without_rest,
            "song_length": self.song_length,
        }


def attribute_metrics(records, tables: ValueTables) -> AttributeStats:
    """Seven melody statistics averaged over the corpus.

    Per melody: repeated 2- and 3-grams of MIDI numbers (occurrences beyond
    the first), max-min MIDI span, distinct MIDI count, mean rest value,
    count of positions with rest exactly 0, and total length in beats
    (durations plus rests).
    """
    if not records:
        raise ConfigurationError("attribute_metrics needs at least one record")
    midi = attribute_values(records, tables, "pitch")
    durations = attribute_values(records, tables, "duration")
    rests = attribute_values(records, tables, "rest")

    per_melody = {name: [] for name in ("rep2", "rep3", "span", "unique",
                                        "avg_rest", "no_rest", "length")}
    for row in range(midi.shape[0]):
        midi_row = midi[row]
        per_melody["rep2"].append(_repeated_ngram_count(midi_row.tolist(), 2))
        per_melody["rep3"].append(_repeated_ngram_count(midi_row.tolist(), 3))
        per_melody["span"].append(float(midi_row.max() - midi_row.min()))
        per_melody["unique"].append(len(set(midi_row.tolist())))
        per_melody["avg_rest"].append(float(rests[row].mean()))
        per_melody["no_rest"].append(int((rests[row] == 0.0).sum()))
        per_melody["length"].append(float(durations[row].sum() + rests[row].sum()))

    return AttributeStats(
        two_midi_repetitions=float(np.mean(per_melody["rep2"])),
        three_midi_repetitions=float(np.mean(per_melody["rep3"])),
        midi_span=float(np.mean(per_melody["span"])),
        unique_midi_count=float(np.mean(per_melody["unique"])),
        avg_rest_value=float(np.mean(per_melody["avg_rest"])),
        notes_without_rest=float(np.mean(per_melody["no_rest"])),
        song_length=float(np.mean(per_melody["length"])),
    )


def transition_distribution(records, tables: ValueTables,
                            max_interval: int = TRANSITION_CLAMP) -> np.ndarray:
    """Normalized histogram of signed MIDI steps, clamped to +-max_interval.

    Bin i holds interval i - max_interval, so index 0 is -max_interval and
    the center bin is interval 0. Sums to 1 over all corpus transitions.
    """
    if not records:
        raise ConfigurationError("transition_distribution needs at least one record")
    midi = attribute_values(records, tables, "pitch")
    if midi.shape[1] < 2:
        raise ConfigurationError("melodies must have at least two positions")
    diffs = np.clip(midi[:, 1:] - midi[:, :-1], -max_interval, max_interval)
    bins = (diffs + max_interval).astype(np.int64).ravel()
    counts = np.bincount(bins, minlength=2 * max_interval + 1).astype(np.float64)
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# conditioning distance and permutation baselines


def align_reference(generated, reference) -> list:
    """Reference records reordered to match the generated song_ids.

    The reference may be a superset corpus; every generated song_id must
    appear in it exactly once.
    """
    ref_by_id = {}
    for record in reference:
        if record.song_id in ref_by_id:
            raise ConfigurationError(f"reference song_id {record.song_id!r} is duplicated")
        ref_by_id[record.song_id] = record
    missing = [r.song_id for r in generated if r.song_id not in ref_by_id]
    if missing:
        raise ConfigurationError("generated songs missing from the reference: "
                                 + ", ".join(repr(s) for s in missing[:10]))
    return [ref_by_id[r.song_id] for r in generated]


def _aligned_value_matrices(generated, reference, attribute: str, tables: ValueTables):
    aligned_ref = align_reference(generated, reference)
    gen_values = attribute_values(generated, tables, attribute)
    ref_values = attribute_values(aligned_ref, tables, attribute)
    return gen_values, ref_values


def conditioning_distance(generated, reference, attribute: str, tables: ValueTables) -> float:
    """Mean absolute value difference over aligned songs and positions."""
    gen_values, ref_values = _aligned_value_matrices(generated, reference, attribute, tables)
    return float(np.mean(np.abs(gen_values - ref_values)))


@dataclass(frozen=True)
class ConditioningBaselines:
    """Observed distance plus permutation-baseline sampling distributions.

    samples keys: "rs" (random ground-truth song per generated song), "rn"
    (positions shuffled within the paired song), "rns" (both). quantiles hold
    the midrank fraction of baseline samples below the observed distance;
    small values mean the alignment carries signal.
    """

    attribute: str
    distance: float
    num_samples: int
    samples: dict
    means: dict = field(init=False)
    quantiles: dict = field(init=False)

    def __post_init__(self):
        means = {key: float(np.mean(values)) for key, values in self.samples.items()}
        quantiles = {}
        for key, values in self.samples.items():
            below = int(np.count_nonzero(values < self.distance))
            ties = int(np.count_nonzero(values == self.distance))
            quantiles[key] = (below + 0.5 * ties) / values.size
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "quantiles", quantiles)


def conditioning_baselines(generated, reference, attribute: str, tables: ValueTables,
                           num_samples: int = DEFAULT_BASELINE_SAMPLES,
                           seed: int = 0) -> ConditioningBaselines:
    """Distance d plus `num_samples` draws of each permutation baseline.

    rs: each generated song compared against a uniformly random ground-truth
    song (drawn with replacement). rn: compared against its own paired song
    with note positions freshly permuted. rns: a random song, positions also
    permuted. Each baseline consumes an independent RNG stream derived from
    (seed, baseline name).
    """
    if num_samples < 1:
        raise ConfigurationError(f"num_samples must be positive, got {num_samples}")
    gen_values, ref_values = _aligned_value_matrices(generated, reference, attribute, tables)
    n, steps = ref_values.shape
    distance = float(np.mean(np.abs(gen_values - ref_values)))

    # chunk the vectorized sampling so memory stays bounded for large corpora
    chunk = max(1, min(num_samples, 2_000_000 // (n * steps)))
    position_template = np.broadcast_to(np.arange(steps), (n, steps))

    def _collect(name: str, resample_songs: bool, shuffle_positions: bool) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(seed, "conditioning", attribute, name))
        out = np.empty(num_samples, dtype=np.float64)
        done = 0
        while done < num_samples:
            size = min(chunk, num_samples - done)
            if resample_songs:
                rows = rng.integers(0, n, size=(size, n))
                values = ref_values[rows]
            else:
                values = np.broadcast_to(ref_values, (size, n, steps))
            if shuffle_positions:
                perms = rng.permuted(np.broadcast_to(position_template, (size, n, steps)), axis=-1)
                values = np.take_along_axis(values, perms, axis=-1)
            out[done:done + size] = np.abs(gen_values[None, :, :] - values).mean(axis=(1, 2))
            done += size
        return out

    samples = {
        "rs": _collect("rs", resample_songs=True, shuffle_positions=False),
        "rn": _collect("rn", resample_songs=False, shuffle_positions=True),
        "rns": _collect("rns", resample_songs=True, shuffle_positions=True),
    }
    return ConditioningBaselines(attribute=attribute, distance=distance,
                                 num_samples=num_samples, samples=samples)


# ---------------------------------------------------------------------------
# full report


@dataclass
class MetricReport:
    """Everything the evaluator computes for one generated-vs-reference pair."""

    self_bleu: float
    mmd_pitch: float
    mmd_duration: float
    mmd_rest: float
    mmd_overall: float
    attribute_stats: AttributeStats
    reference_attribute_stats: AttributeStats
    transition_histogram: np.ndarray
    reference_transition_histogram: np.ndarray
    conditioning: dict  # attribute -> ConditioningBaselines

    def to_dict(self) -> dict:
        conditioning = {}
        for attribute, baselines in self.conditioning.items():
            conditioning[attribute] = {
                "distance": baselines.distance,
                "num_samples": baselines.num_samples,
                "baseline_means": baselines.means,
                "baseline_quantiles": baselines.quantiles,
            }
        return {
            "self_bleu": self.self_bleu,
            "mmd": {
                "pitch": self.mmd_pitch,
                "duration": self.mmd_duration,
                "rest": self.mmd_rest,
                "overall": self.mmd_overall,
            },
            "attribute_stats": self.attribute_stats.to_dict(),
            "reference_attribute_stats": self.reference_attribute_stats.to_dict(),
            "transition_histogram": [float(v) for v in self.transition_histogram],
            "reference_transition_histogram": [float(v) for v in self.reference_transition_histogram],
            "conditioning": conditioning,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def compute_metric_report(generated, reference, tables: ValueTables,
                          kernel: KernelSpec = KernelSpec(),
                          baseline_samples: int = DEFAULT_BASELINE_SAMPLES,
                          seed: int = 0) -> MetricReport:
    """Assemble the full report against the song_id-aligned reference subset."""
    aligned = align_reference(generated, reference)
    mmds = mmd_by_attribute(generated, aligned, tables, kernel)
    conditioning = {
        attribute: conditioning_baselines(generated, aligned, attribute, tables,
                                          num_samples=baseline_samples, seed=seed)
        for attribute in CONDITIONED_ATTRIBUTES
    }
    return MetricReport(
        self_bleu=self_bleu(melody_tokens(generated)),
        mmd_pitch=mmds["pitch"],
        mmd_duration=mmds["duration"],
        mmd_rest=mmds["rest"],
        mmd_overall=mmds["overall"],
        attribute_stats=attribute_metrics(generated, tables),
        reference_attribute_stats=attribute_metrics(aligned, tables),
        transition_histogram=transition_distribution(generated, tables),
        reference_transition_histogram=transition_distribution(aligned, tables),
        conditioning=conditioning,
    )
