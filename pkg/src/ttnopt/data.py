"""Loading the 8x8 handwritten digits CSV and splitting it."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .learning import Batch, LabeledSample, spin_feature_map


class DataError(ValueError):
    """Malformed or out-of-range input data."""


@dataclass(frozen=True)
class DatasetSpec:
    path: Path
    format: str = "csv"
    pixel_divisor: float = 16.0
    d: int = 64
    num_classes: int = 10

    def __post_init__(self):
        if self.d <= 0 or self.num_classes <= 0:
            raise ValueError("feature and class counts must be positive")
        if self.pixel_divisor <= 0:
            raise ValueError("pixel divisor must be positive")
        if self.format != "csv":
            raise ValueError(f"unsupported dataset format {self.format!r}")


def read_digits_csv(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    """Raw pixel matrix ``(N, d)`` and integer labels ``(N,)``.

    Each row holds ``d`` integer pixels followed by the label. Errors report
    the 1-based line number.
    """
    pixels, labels = [], []
    with open(spec.path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != spec.d + 1:
                raise DataError(f"line {lineno}: expected {spec.d + 1} fields, got {len(row)}")
            try:
                vals = [int(c) for c in row]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            label = vals[-1]
            if not 0 <= label < spec.num_classes:
                raise DataError(f"line {lineno}: label {label} outside [0, {spec.num_classes})")
            pixels.append(vals[:-1])
            labels.append(label)
    return np.asarray(pixels, dtype=float).reshape(-1, spec.d), np.asarray(labels, dtype=int)


def to_batch(pixels: np.ndarray, labels: np.ndarray, spec: DatasetSpec,
             counter: dict | None = None) -> Batch:
    """Spin-mapped features and one-hot targets."""
    feats = spin_feature_map(pixels / spec.pixel_divisor, counter)  # (N, d, 2)
    targets = np.zeros((len(labels), spec.num_classes))
    targets[np.arange(len(labels)), labels] = 1.0
    return Batch([feats[:, i, :] for i in range(spec.d)], targets, labels)


def load_digits(spec: DatasetSpec | str | Path) -> list[LabeledSample]:
    """Read the digits file into labeled samples with one-hot targets."""
    if not isinstance(spec, DatasetSpec):
        spec = DatasetSpec(Path(spec))
    pixels, labels = read_digits_csv(spec)
    return to_batch(pixels, labels, spec).samples()


def load_digits_batch(spec: DatasetSpec | str | Path) -> Batch:
    if not isinstance(spec, DatasetSpec):
        spec = DatasetSpec(Path(spec))
    pixels, labels = read_digits_csv(spec)
    return to_batch(pixels, labels, spec)


def split_indices(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation of ``range(n)`` cut after ``floor(fraction * n)`` entries."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("train fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fraction * n))
    return perm[:n_train], perm[n_train:]


def split(data, fraction: float, seed: int):
    """Deterministic shuffled split of a sample list or a :class:`Batch`."""
    tr, te = split_indices(len(data), fraction, seed)
    if isinstance(data, Batch):
        return data.subset(tr), data.subset(te)
    return [data[i] for i in tr], [data[i] for i in te]
