"""Corpus schema, file I/O, splitting, and synthetic corpus generation.

A corpus is a JSONL file: the first line is a header carrying the schema
version and the value tables (index -> MIDI number / beat fraction), every
following line is one aligned record with a song id, 20 syllable tokens, and
20 pitch/duration/rest indices. Syllable embeddings live in a JSONL sidecar
(`<stem>.embeddings.jsonl`) mapping token -> 20 floats.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataValidationError, UnknownTokenError

SCHEMA_VERSION = 1
CORPUS_KIND = "melody-corpus"

SEQUENCE_LENGTH = 20
SYLLABLE_DIM = 20
PITCH_VOCAB = 100
DURATION_VOCAB = 12
REST_VOCAB = 7

SPLIT_RATIOS = (8, 1, 1)

_SYNTH_VOCAB_SIZE = 50
# C major degrees within one octave, expressed as MIDI numbers
_SYNTH_SCALE_MIDI = (60, 62, 64, 65, 67, 69, 71, 72)


@dataclass(frozen=True)
class ValueTables:
    """Lookup tables from attribute index to numeric value.

    pitch: MIDI note numbers, duration/rest: beat fractions. Rest index 0 is
    reserved for "no rest" and must map to 0.0.
    """

    pitch_midi: tuple
    duration_beats: tuple
    rest_beats: tuple

    def __post_init__(self):
        object.__setattr__(self, "pitch_midi", tuple(self.pitch_midi))
        object.__setattr__(self, "duration_beats", tuple(float(v) for v in self.duration_beats))
        object.__setattr__(self, "rest_beats", tuple(float(v) for v in self.rest_beats))
        problems = []
        if len(self.pitch_midi) != PITCH_VOCAB:
            problems.append(f"pitch table must have {PITCH_VOCAB} entries, got {len(self.pitch_midi)}")
        if len(self.duration_beats) != DURATION_VOCAB:
            problems.append(f"duration table must have {DURATION_VOCAB} entries, got {len(self.duration_beats)}")
        if len(self.rest_beats) != REST_VOCAB:
            problems.append(f"rest table must have {REST_VOCAB} entries, got {len(self.rest_beats)}")
        for name, table in (("pitch", self.pitch_midi), ("duration", self.duration_beats), ("rest", self.rest_beats)):
            if len(set(table)) != len(table):
                problems.append(f"{name} table entries must be distinct")
        if any(v <= 0 for v in self.duration_beats):
            problems.append("duration values must be positive")
        if any(v < 0 for v in self.rest_beats):
            problems.append("rest values must be nonnegative")
        if self.rest_beats and self.rest_beats[0] != 0.0:
            problems.append("rest table index 0 must map to 0.0 (no rest)")
        if problems:
            raise DataValidationError(problems)

    def values_for(self, attribute: str) -> np.ndarray:
        table = {"pitch": self.pitch_midi, "duration": self.duration_beats, "rest": self.rest_beats}
        if attribute not in table:
            raise ConfigurationError(f"unknown attribute {attribute!r}; expected pitch, duration, or rest")
        return np.asarray(table[attribute], dtype=np.float64)


def default_value_tables() -> ValueTables:
    """Tables used by the synthetic corpus: MIDI 21..120 plus common beat values."""
    return ValueTables(
        pitch_midi=tuple(range(21, 21 + PITCH_VOCAB)),
        duration_beats=(0.125, 0.25, 0.375, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0),
        rest_beats=(0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0),
    )


@dataclass
class AlignedRecord:
    """One song: syllable tokens aligned position-by-position with note attributes."""

    song_id: str
    syllable_tokens: tuple
    pitch_idx: tuple
    duration_idx: tuple
    rest_idx: tuple
    syllable_embeddings: np.ndarray | None = None

    def __post_init__(self):
        self.syllable_tokens = tuple(self.syllable_tokens)
        self.pitch_idx = tuple(int(i) for i in self.pitch_idx)
        self.duration_idx = tuple(int(i) for i in self.duration_idx)
        self.rest_idx = tuple(int(i) for i in self.rest_idx)


def _validate_record_fields(obj: dict, where: str) -> list:
    problems = []
    if not isinstance(obj.get("song_id"), str) or not obj.get("song_id"):
        problems.append(f"{where}: song_id must be a nonempty string")
    fields = (("syllables", str, None), ("pitch", int, PITCH_VOCAB),
              ("duration", int, DURATION_VOCAB), ("rest", int, REST_VOCAB))
    for name, kind, vocab in fields:
        seq = obj.get(name)
        if not isinstance(seq, list) or len(seq) != SEQUENCE_LENGTH:
            problems.append(f"{where}: {name} must be a list of {SEQUENCE_LENGTH} entries")
            continue
        for pos, value in enumerate(seq):
            if kind is str and not isinstance(value, str):
                problems.append(f"{where}: {name}[{pos}] must be a string")
            elif kind is int:
                if not isinstance(value, int) or isinstance(value, bool):
                    problems.append(f"{where}: {name}[{pos}] must be an integer")
                elif not 0 <= value < vocab:
                    problems.append(f"{where}: {name}[{pos}]={value} outside [0, {vocab})")
    return problems


def embedding_sidecar_path(corpus_path) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.stem + ".embeddings.jsonl")


def atomic_write_text(path, text: str) -> None:
    """Write a file so readers never observe a partial write."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def save_dataset(path, records, tables: ValueTables, embedding_table: dict | None = None) -> None:
    """Write a corpus JSONL (and, when given, the embedding sidecar)."""
    path = Path(path)
    header = {
        "schema_version": SCHEMA_VERSION,
        "kind": CORPUS_KIND,
        "value_tables": {
            "pitch_midi": list(tables.pitch_midi),
            "duration_beats": list(tables.duration_beats),
            "rest_beats": list(tables.rest_beats),
        },
    }
    lines = [json.dumps(header, sort_keys=True)]
    for record in records:
        lines.append(json.dumps({
            "song_id": record.song_id,
            "syllables": list(record.syllable_tokens),
            "pitch": list(record.pitch_idx),
            "duration": list(record.duration_idx),
            "rest": list(record.rest_idx),
        }, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")
    if embedding_table is not None:
        emb_lines = []
        for token in sorted(embedding_table):
            vector = np.asarray(embedding_table[token], dtype=np.float64)
            emb_lines.append(json.dumps({"token": token, "vector": vector.tolist()}, sort_keys=True))
        atomic_write_text(embedding_sidecar_path(path), "\n".join(emb_lines) + "\n")


def _load_embedding_table(path: Path) -> dict:
    table = {}
    problems = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{line_no}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"{where}: not valid JSON ({exc.msg})")
                continue
            token = obj.get("token")
            vector = obj.get("vector")
            if not isinstance(token, str):
                problems.append(f"{where}: token must be a string")
                continue
            if token in table:
                problems.append(f"{where}: duplicate token {token!r}")
                continue
            if (not isinstance(vector, list) or len(vector) != SYLLABLE_DIM
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vector)):
                problems.append(f"{where}: vector must be {SYLLABLE_DIM} numbers")
                continue
            arr = np.asarray(vector, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                problems.append(f"{where}: vector entries must be finite")
                continue
            table[token] = arr
    if problems:
        raise DataValidationError(problems)
    return table


def load_dataset(path):
    """Read a corpus file. Returns (records, tables, embedding_table_or_None).

    Every malformed line is reported (with its line number) in a single
    DataValidationError rather than failing on the first.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"corpus file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        raw_lines = handle.readlines()
    if not raw_lines or not raw_lines[0].strip():
        raise DataValidationError([f"{path.name}: missing header line"])

    problems = []
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as exc:
        raise DataValidationError([f"{path.name}:1: header is not valid JSON ({exc.msg})"]) from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"{path.name}:1: unsupported schema_version {header.get('schema_version')!r}")
    if header.get("kind") != CORPUS_KIND:
        problems.append(f"{path.name}:1: kind must be {CORPUS_KIND!r}")
    raw_tables = header.get("value_tables")
    tables = None
    if not isinstance(raw_tables, dict):
        problems.append(f"{path.name}:1: header missing value_tables")
    else:
        try:
            tables = ValueTables(
                pitch_midi=raw_tables.get("pitch_midi", ()),
                duration_beats=raw_tables.get("duration_beats", ()),
                rest_beats=raw_tables.get("rest_beats", ()),
            )
        except DataValidationError as exc:
            problems.extend(f"{path.name}:1: {p}" for p in exc.problems)
    if problems:
        raise DataValidationError(problems)

    records = []
    seen_ids = set()
    for line_no, line in enumerate(raw_lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        where = f"{path.name}:{line_no}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            problems.append(f"{where}: not valid JSON ({exc.msg})")
            continue
        record_problems = _validate_record_fields(obj, where)
        if record_problems:
            problems.extend(record_problems)
            continue
        if obj["song_id"] in seen_ids:
            problems.append(f"{where}: duplicate song_id {obj['song_id']!r}")
            continue
        seen_ids.add(obj["song_id"])
        records.append(AlignedRecord(
            song_id=obj["song_id"],
            syllable_tokens=obj["syllables"],
            pitch_idx=obj["pitch"],
            duration_idx=obj["duration"],
            rest_idx=obj["rest"],
        ))
    if problems:
        raise DataValidationError(problems)

    sidecar = embedding_sidecar_path(path)
    embedding_table = _load_embedding_table(sidecar) if sidecar.exists() else None
    return records, tables, embedding_table


def embed_syllables(tokens, embedding_table: dict) -> np.ndarray:
    """Look up each token's embedding; shape (len(tokens), SYLLABLE_DIM)."""
    rows = []
    for token in tokens:
        if token not in embedding_table:
            raise UnknownTokenError(token)
        rows.append(np.asarray(embedding_table[token], dtype=np.float64))
    return np.stack(rows, axis=0) if rows else np.zeros((0, SYLLABLE_DIM))


@dataclass(frozen=True)
class DatasetSplit:
    """Deterministic 8:1:1 shuffle-split of a record list."""

    train: tuple
    validation: tuple
    test: tuple
    split_seed: int

    @property
    def sizes(self):
        return (len(self.train), len(self.validation), len(self.test))


def split_dataset(records, seed: int) -> DatasetSplit:
    """Shuffle with the given seed, then cut 8:1:1 (train gets floor(0.8n),
    validation floor(0.1n), test the remainder)."""
    records = list(records)
    n = len(records)
    if n < 10:
        raise ConfigurationError(f"need at least 10 records to split 8:1:1, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = (8 * n) // 10
    n_val = n // 10
    train = tuple(records[i] for i in order[:n_train])
    validation = tuple(records[i] for i in order[n_train:n_train + n_val])
    test = tuple(records[i] for i in order[n_train + n_val:])
    return DatasetSplit(train=train, validation=validation, test=test, split_seed=seed)


def synthesize_dataset(num_records: int, correlation_strength: float, seed: int):
    """Generate a corpus with planted syllable -> duration/rest structure.

    Each syllable token has a designated duration and rest category; with
    probability `correlation_strength` a position uses the designated
    category, otherwise a uniform background draw. Pitch follows a first-order
    Markov walk over one diatonic octave, independent of the syllables.

    Every record opens with a record-distinct anchor token (cycling through
    the vocabulary), so corpora no larger than the vocabulary are uniquely
    identifiable from their conditioning sequence alone — a conditional
    generator can in principle reproduce each record exactly. Remaining
    positions draw uniformly. Returns (records, tables, embedding_table).
    """
    if num_records < 10:
        raise ConfigurationError(f"num_records must be at least 10, got {num_records}")
    if not 0.0 <= correlation_strength <= 1.0:
        raise ConfigurationError(f"correlation_strength must lie in [0, 1], got {correlation_strength}")

    rng = np.random.default_rng(seed)
    tables = default_value_tables()

    tokens = tuple(f"syl{i:03d}" for i in range(_SYNTH_VOCAB_SIZE))
    embeddings = rng.normal(0.0, 1.0, size=(_SYNTH_VOCAB_SIZE, SYLLABLE_DIM))
    embedding_table = {token: embeddings[i].copy() for i, token in enumerate(tokens)}
    token_duration = rng.integers(0, DURATION_VOCAB, size=_SYNTH_VOCAB_SIZE)
    token_rest = rng.integers(0, REST_VOCAB, size=_SYNTH_VOCAB_SIZE)

    # Markov transitions over scale degrees, biased toward small moves
    scale_idx = np.array([midi - tables.pitch_midi[0] for midi in _SYNTH_SCALE_MIDI])
    degrees = np.arange(len(scale_idx))
    moves = np.abs(degrees[:, None] - degrees[None, :])
    transition = np.exp(-moves.astype(np.float64))
    transition /= transition.sum(axis=1, keepdims=True)
    transition_cdf = np.cumsum(transition, axis=1)

    records = []
    for i in range(num_records):
        syl = rng.integers(0, _SYNTH_VOCAB_SIZE, size=SEQUENCE_LENGTH)
        # Record-distinct opening anchor: keeps small corpora identifiable
        # from the syllable sequence alone (see docstring).
        syl[0] = i % _SYNTH_VOCAB_SIZE

        use_planted_dur = rng.random(SEQUENCE_LENGTH) < correlation_strength
        background_dur = rng.integers(0, DURATION_VOCAB, size=SEQUENCE_LENGTH)
        duration = np.where(use_planted_dur, token_duration[syl], background_dur)

        use_planted_rest = rng.random(SEQUENCE_LENGTH) < correlation_strength
        background_rest = rng.integers(0, REST_VOCAB, size=SEQUENCE_LENGTH)
        rest = np.where(use_planted_rest, token_rest[syl], background_rest)

        degree = int(rng.integers(0, len(scale_idx)))
        walk_draws = rng.random(SEQUENCE_LENGTH)
        pitch = np.empty(SEQUENCE_LENGTH, dtype=np.int64)
        for t in range(SEQUENCE_LENGTH):
            pitch[t] = scale_idx[degree]
            degree = min(int(np.searchsorted(transition_cdf[degree], walk_draws[t])), len(scale_idx) - 1)

        records.append(AlignedRecord(
            song_id=f"synth-{i:05d}",
            syllable_tokens=tuple(tokens[j] for j in syl),
            pitch_idx=tuple(int(v) for v in pitch),
            duration_idx=tuple(int(v) for v in duration),
            rest_idx=tuple(int(v) for v in rest),
        ))
    return records, tables, embedding_table
