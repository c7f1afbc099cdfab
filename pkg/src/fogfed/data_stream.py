"""Radar frames, dataset files, per-fog shards and the synthetic generator.

Labels follow the FMCW safe-distance table: eight half-open distance bins,
lower bound inclusive, with classes 1-3 (closer than 1.5 m) critical.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataParseError, InvalidArgumentError

FEATURE_DIM = 512
NUM_CLASSES = 8
SYNTH_RANGE_M = 4.0
SYNTH_BUMP_WIDTH = 8.0

# (lower bound inclusive, upper bound exclusive, label, critical)
CLASS_RULES: tuple[tuple[float, float, int, bool], ...] = (
    (0.0, 0.5, 1, True),
    (0.5, 1.0, 2, True),
    (1.0, 1.5, 3, True),
    (1.5, 2.0, 4, False),
    (2.0, 2.5, 5, False),
    (2.5, 3.0, 6, False),
    (3.0, 3.5, 7, False),
    (3.5, math.inf, 0, False),
)

# Distance ranges the generator samples from; class 0 and 1 are clipped to
# keep every bump inside the 512 bins and away from bin 0.
SYNTH_INTERVALS = {
    0: (3.5, 4.0),
    1: (0.05, 0.5),
    **{c: (0.5 * (c - 1), 0.5 * c) for c in range(2, 8)},
}

_RAW_HEADER = struct.Struct("<II")


def label_of_distance(d: float) -> int:
    if not d >= 0:  # also rejects NaN
        raise InvalidArgumentError(f"distance must be a non-negative number, got {d}")
    for lo, hi, label, _ in CLASS_RULES:
        if lo <= d < hi:
            return label
    raise AssertionError("unreachable: class rules cover [0, inf)")


def is_critical(label: int) -> bool:
    if not 0 <= label < NUM_CLASSES:
        raise InvalidArgumentError(f"label must lie in [0, {NUM_CLASSES}), got {label}")
    return label in (1, 2, 3)


@dataclass(frozen=True, eq=False)
class Frame:
    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.features.shape != (FEATURE_DIM,):
            raise InvalidArgumentError(f"frame needs {FEATURE_DIM} features, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise InvalidArgumentError("frame features must be finite")
        if not 0 <= self.label < NUM_CLASSES:
            raise InvalidArgumentError(f"label {self.label} out of range")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered block of frames stored as a feature matrix and a label vector."""

    features: np.ndarray
    labels: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1 or len(self.features) != len(self.labels):
            raise InvalidArgumentError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )

    @classmethod
    def from_frames(cls, frames, source: str = "") -> "Dataset":
        frames = list(frames)
        if not frames:
            return cls(np.empty((0, FEATURE_DIM), np.float32), np.empty(0, np.uint8), source)
        features = np.stack([f.features for f in frames]).astype(np.float32)
        labels = np.array([f.label for f in frames], dtype=np.uint8)
        return cls(features, labels, source)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return NUM_CLASSES

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Dataset(self.features[i], self.labels[i], self.source)
        return Frame(self.features[i], int(self.labels[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def take(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.source)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.features.dtype == other.features.dtype
            and np.array_equal(self.labels, other.labels)
            and self.features.tobytes() == other.features.tobytes()
        )


@dataclass(eq=False)
class Shard:
    """One fog node's slice of the training set, consumed window by window."""

    fog_id: int
    data: Dataset
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.intp))
    cursor: int = 0

    def __len__(self) -> int:
        return len(self.data)

    def remaining(self) -> int:
        return len(self.data) - self.cursor

    def full_windows(self, window_size: int) -> int:
        return self.remaining() // window_size


def next_window(shard: Shard, window_size: int) -> Dataset | None:
    """Return the next ``window_size`` frames and advance, or None if fewer remain."""
    if window_size < 1:
        raise InvalidArgumentError("window_size must be >= 1")
    start = shard.cursor
    if start + window_size > len(shard.data):
        return None
    shard.cursor = start + window_size
    return shard.data[start:start + window_size]


def partition(data: Dataset, k: int, seed: int) -> list[Shard]:
    """Shuffle with ``seed`` then cut into k contiguous shards whose sizes differ by at most one."""
    if k < 1 or k > len(data):
        raise InvalidArgumentError(f"cannot split {len(data)} frames into {k} shards")
    order = np.random.default_rng(seed).permutation(len(data))
    return [
        Shard(fog_id=i, data=data.take(part), indices=part)
        for i, part in enumerate(np.array_split(order, k))
    ]


def synth_generate(n: int, seed: int, noise_sigma: float = 0.05) -> Dataset:
    """Radar-like range profiles: one Gaussian bump at the target's range bin plus noise.

    The bump sits at bin floor(512 * d / 4.0) for a distance d drawn uniformly
    within the label's interval; amplitude 1, standard deviation 8 bins.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if not noise_sigma >= 0 or not math.isfinite(noise_sigma):
        raise InvalidArgumentError("noise_sigma must be a finite non-negative number")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, NUM_CLASSES, size=n)
    lo = np.array([SYNTH_INTERVALS[c][0] for c in range(NUM_CLASSES)])[labels]
    hi = np.array([SYNTH_INTERVALS[c][1] for c in range(NUM_CLASSES)])[labels]
    distances = rng.uniform(lo, hi)
    centers = range_bin(distances)
    bins = np.arange(FEATURE_DIM)
    features = np.exp(-0.5 * ((bins[None, :] - centers[:, None]) / SYNTH_BUMP_WIDTH) ** 2)
    if noise_sigma > 0:
        features += rng.normal(0.0, noise_sigma, size=features.shape)
    return Dataset(features.astype(np.float32), labels.astype(np.uint8), f"synth:{n}:{seed}:{noise_sigma}")


def range_bin(distance):
    return np.floor(FEATURE_DIM * np.asarray(distance) / SYNTH_RANGE_M).astype(np.intp)


# --- file formats -----------------------------------------------------------


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _raw_dtype(dim: int) -> np.dtype:
    return np.dtype([("features", "<f4", (dim,)), ("label", "u1")])


def save_raw(data: Dataset, path) -> None:
    records = np.empty(len(data), dtype=_raw_dtype(data.feature_dim))
    records["features"] = data.features
    records["label"] = data.labels
    _atomic_write_bytes(Path(path), _RAW_HEADER.pack(len(data), data.feature_dim) + records.tobytes())


def save_csv(data: Dataset, path) -> None:
    lines = []
    for x, y in zip(data.features, data.labels):
        lines.append(",".join(repr(float(v)) for v in x) + f",{int(y)}")
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def load_raw(path) -> Dataset:
    blob = Path(path).read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise DataParseError("file shorter than the 8-byte header", "offset 0")
    count, dim = _RAW_HEADER.unpack_from(blob)
    if dim != FEATURE_DIM:
        raise DataParseError(f"feature dim {dim}, expected {FEATURE_DIM}", "offset 4")
    dtype = _raw_dtype(dim)
    expected = _RAW_HEADER.size + count * dtype.itemsize
    if len(blob) < expected:
        whole = (len(blob) - _RAW_HEADER.size) // dtype.itemsize
        offset = _RAW_HEADER.size + whole * dtype.itemsize
        raise DataParseError(f"truncated: header declares {count} frames, file holds {whole}", f"offset {offset}")
    if len(blob) > expected:
        raise DataParseError(f"{len(blob) - expected} trailing bytes after {count} frames", f"offset {expected}")
    records = np.frombuffer(blob, dtype=dtype, count=count, offset=_RAW_HEADER.size)
    bad = np.flatnonzero(records["label"] >= NUM_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DataParseError(f"label {records['label'][i]} >= {NUM_CLASSES}", f"frame {i} (offset {_RAW_HEADER.size + i * dtype.itemsize})")
    features = records["features"].copy()
    if not np.isfinite(features).all():
        i = int(np.flatnonzero(~np.isfinite(features).all(axis=1))[0])
        raise DataParseError("non-finite feature", f"frame {i} (offset {_RAW_HEADER.size + i * dtype.itemsize})")
    return Dataset(features, records["label"].copy(), str(path))


def load_csv(path) -> Dataset:
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            where = f"{path}:{lineno}"
            if len(parts) != FEATURE_DIM + 1:
                raise DataParseError(f"expected {FEATURE_DIM + 1} fields, found {len(parts)}", where)
            try:
                x = np.array([float(p) for p in parts[:FEATURE_DIM]])
            except ValueError as exc:
                raise DataParseError(f"non-numeric feature ({exc})", where) from None
            try:
                y = int(parts[-1])
            except ValueError:
                raise DataParseError(f"non-integer label {parts[-1]!r}", where) from None
            if not 0 <= y < NUM_CLASSES:
                raise DataParseError(f"label {y} outside [0, {NUM_CLASSES})", where)
            if not np.isfinite(x).all():
                raise DataParseError("non-finite feature", where)
            rows.append(x)
            labels.append(y)
    if not rows:
        return Dataset(np.empty((0, FEATURE_DIM), np.float32), np.empty(0, np.uint8), str(path))
    return Dataset(np.array(rows, dtype=np.float32), np.array(labels, dtype=np.uint8), str(path))


def load(path, format: str | None = None) -> Dataset:
    """Load a dataset; ``format`` is "csv" or "raw-f32", inferred from the suffix when omitted."""
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "raw-f32"
    if format == "csv":
        return load_csv(path)
    if format == "raw-f32":
        return load_raw(path)
    raise InvalidArgumentError(f"unknown dataset format {format!r}")
