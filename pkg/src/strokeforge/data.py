"""QuickDraw ingestion: stroke-5 sequences, splits, and crop pairs.

A stroke-5 point is (dx, dy, p1, p2, p3): an offset from the previous pen
position plus a one-hot pen state.  p1 = the stroke continues past this
point, p2 = the stroke ends here (pen lifts), p3 = the whole sketch ends
here.  The first pen position of a sketch is an implicit origin anchor and
is not stored; reconstruction starts at (0, 0).
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DEFAULT_MAX_SEQ_LEN = 250

PEN_DOWN = 2  # column index of p1
PEN_UP = 3  # column index of p2
PEN_END = 4  # column index of p3


class DataError(ValueError):
    """User or input-data problem (maps to CLI exit code 2)."""


class Stroke5Point(NamedTuple):
    dx: float
    dy: float
    p1: int
    p2: int
    p3: int


@dataclass
class StrokeSequence:
    """Ordered stroke-5 points for one sketch, stored as a float32 [N, 5] array."""

    points: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 5)

    def __len__(self):
        return len(self.points)

    def validate(self, max_seq_len=None):
        if len(self.points) == 0:
            raise DataError(f"{self.source_id}: empty sequence")
        pens = self.points[:, 2:5]
        if not np.array_equal(pens.sum(axis=1), np.ones(len(self.points), dtype=np.float32)):
            raise DataError(f"{self.source_id}: pen state is not one-hot")
        if not np.all((pens == 0) | (pens == 1)):
            raise DataError(f"{self.source_id}: pen bits must be 0 or 1")
        end_rows = np.flatnonzero(self.points[:, PEN_END] == 1)
        if len(end_rows) != 1 or end_rows[0] != len(self.points) - 1:
            raise DataError(f"{self.source_id}: p3 must appear exactly once, on the last point")
        if max_seq_len is not None and len(self.points) > max_seq_len:
            raise DataError(f"{self.source_id}: length {len(self.points)} exceeds {max_seq_len}")
        return self


@dataclass
class DatasetSplit:
    train: list
    test: list
    validation: list
    offset_scale: float = 1.0


@dataclass
class CropPair:
    """Prefix (rendered CNN input) and suffix (training labels) of one sketch."""

    prefix: StrokeSequence
    suffix: StrokeSequence


@dataclass
class ParseStats:
    parsed: int = 0
    malformed: int = 0
    empty: int = 0
    dropped_long: int = 0

    def as_dict(self):
        return {
            "parsed": self.parsed,
            "malformed": self.malformed,
            "empty": self.empty,
            "dropped_long": self.dropped_long,
        }


def polylines_to_stroke5(strokes):
    """Convert absolute-coordinate polylines to stroke-5 rows.

    ``strokes`` is a list of [[x...], [y...]] pairs.  The first point of the
    first stroke becomes the origin anchor; every later point is emitted as
    an offset from its predecessor.  The last point of each stroke carries
    p2, except the sketch's final point which carries p3.
    """
    rows = []
    prev = None
    for xs, ys in strokes:
        if len(xs) == 0:
            continue
        for idx in range(len(xs)):
            pt = (float(xs[idx]), float(ys[idx]))
            if prev is None:
                prev = pt
                continue
            last_of_stroke = idx == len(xs) - 1
            rows.append([pt[0] - prev[0], pt[1] - prev[1], 0.0 if last_of_stroke else 1.0, 1.0 if last_of_stroke else 0.0, 0.0])
            prev = pt
    if not rows:
        return None
    rows[-1][2:5] = [0.0, 0.0, 1.0]
    return np.asarray(rows, dtype=np.float32)


def parse_ndjson(path, max_seq_len=DEFAULT_MAX_SEQ_LEN):
    """Parse a QuickDraw newline-delimited JSON file.

    Returns (sequences, stats).  Malformed lines and empty drawings are
    skipped and counted; sequences longer than ``max_seq_len`` are dropped
    and counted.
    """
    sequences = []
    stats = ParseStats()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                strokes = record["drawing"]
            except (json.JSONDecodeError, KeyError, TypeError):
                stats.malformed += 1
                continue
            try:
                points = polylines_to_stroke5(strokes)
            except (TypeError, ValueError, IndexError):
                stats.malformed += 1
                continue
            if points is None:
                stats.empty += 1
                continue
            if len(points) > max_seq_len:
                stats.dropped_long += 1
                continue
            source_id = str(record.get("key_id", f"line{lineno}"))
            sequences.append(StrokeSequence(points, source_id))
            stats.parsed += 1
    return sequences, stats


def stroke5_to_absolute(points):
    """Cumulative-sum reconstruction: [N, 5] offsets -> [N+1, 2] positions.

    Row 0 is the origin anchor.  Computed in float64 so that integer-valued
    offsets round-trip exactly.
    """
    points = np.asarray(points)
    absolute = np.zeros((len(points) + 1, 2), dtype=np.float64)
    absolute[1:] = np.cumsum(points[:, :2].astype(np.float64), axis=0)
    return absolute


def absolute_to_stroke5(absolute, pen_states):
    """Inverse of :func:`stroke5_to_absolute` given the original pen columns."""
    absolute = np.asarray(absolute, dtype=np.float64)
    offsets = np.diff(absolute, axis=0)
    out = np.concatenate([offsets, np.asarray(pen_states, dtype=np.float64)], axis=1)
    return out.astype(np.float32)


def offset_std(sequences):
    """Standard deviation of all dx and dy values pooled together."""
    values = np.concatenate([s.points[:, :2].reshape(-1) for s in sequences])
    return float(np.std(values.astype(np.float64)))


def normalize_offsets(sequences):
    """Divide every offset by the pooled std; pen bits untouched.

    Returns (new sequences, offset_scale).  The scale should be computed on
    the training split only; apply it to other splits with
    :func:`scale_offsets`.
    """
    if not sequences:
        raise DataError("normalize_offsets: no sequences given")
    scale = offset_std(sequences)
    if scale <= 0.0 or not np.isfinite(scale):
        raise DataError(f"normalize_offsets: offsets have zero variance (std={scale})")
    return scale_offsets(sequences, scale), scale


def scale_offsets(sequences, scale):
    out = []
    for s in sequences:
        pts = s.points.copy()
        pts[:, :2] /= np.float32(scale)
        out.append(StrokeSequence(pts, s.source_id))
    return out


def denormalize_offsets(sequence, scale):
    pts = sequence.points.copy()
    pts[:, :2] *= np.float32(scale)
    return StrokeSequence(pts, sequence.source_id)


def split_dataset(sequences, train_size, test_size, val_size, seed=0):
    """Deterministic shuffled split, disjoint by construction."""
    need = train_size + test_size + val_size
    if len(sequences) < need:
        raise DataError(
            f"split_dataset: need {need} sequences (train {train_size} + test {test_size} "
            f"+ validation {val_size}) but only {len(sequences)} are available"
        )
    order = np.random.default_rng(seed).permutation(len(sequences))
    picked = [sequences[i] for i in order[:need]]
    return DatasetSplit(
        train=picked[:train_size],
        test=picked[train_size : train_size + test_size],
        validation=picked[train_size + test_size :],
    )


def random_crop(sequence, rng):
    """Split a sequence at a uniform point into (prefix, suffix)."""
    n = len(sequence)
    if n < 2:
        raise DataError(f"random_crop: sequence length {n} < 2")
    cut = int(rng.integers(1, n))
    return CropPair(
        prefix=StrokeSequence(sequence.points[:cut].copy(), sequence.source_id),
        suffix=StrokeSequence(sequence.points[cut:].copy(), sequence.source_id),
    )


def pad_points(points, max_seq_len):
    """Pad [N, 5] points to [max_seq_len, 5] with end-of-sketch rows."""
    points = np.asarray(points, dtype=np.float32)
    if len(points) > max_seq_len:
        raise DataError(f"pad_points: length {len(points)} exceeds {max_seq_len}")
    padded = np.zeros((max_seq_len, 5), dtype=np.float32)
    padded[:, PEN_END] = 1.0
    padded[: len(points)] = points
    return padded


# --- internal storage -------------------------------------------------------
# One JSON object per line: {"id": ..., "points": [[dx, dy, p1, p2, p3], ...]}.

def write_jsonl(path, sequences):
    with open(path, "w", encoding="utf-8") as fh:
        for s in sequences:
            fh.write(json.dumps({"id": s.source_id, "points": [[float(v) for v in row] for row in s.points]}))
            fh.write("\n")


def read_jsonl(path):
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            sequences.append(StrokeSequence(np.asarray(record["points"], dtype=np.float32), str(record["id"])))
    return sequences
