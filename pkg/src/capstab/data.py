"""Heartbeat-style dataset handling: CSV ingestion, synthesis, splitting.

CSV rows are L signal values followed by one integer class label (the common
public heartbeat-CSV layout), five classes. Signals are min-max normalized to
[0, 1] per signal when they arrive outside that range. The synthetic
generator produces five morphologically distinct waveform classes so the full
pipeline runs without any external data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError

N_CLASSES = 5

CLASS_NAMES = ("spike", "dome", "double-bump", "notch", "flat-dip")


@dataclass(frozen=True)
class Beat:
    """One fixed-length signal in [0, 1] with its class label."""

    signal: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(
            self, "signal", np.ascontiguousarray(self.signal, dtype=np.float64)
        )
        if self.signal.ndim != 1 or self.signal.size == 0:
            raise DataError(f"signal must be a non-empty 1-D array, got shape {self.signal.shape}")
        if not np.all(np.isfinite(self.signal)):
            raise DataError("signal contains NaN or Inf")
        if self.signal.min() < 0.0 or self.signal.max() > 1.0:
            raise DataError("signal values must lie in [0, 1]")
        if not 0 <= self.label < N_CLASSES:
            raise DataError(f"label {self.label} outside 0..{N_CLASSES - 1}")


@dataclass
class Dataset:
    beats: list[Beat]

    def __post_init__(self):
        if not self.beats:
            raise DataError("dataset is empty")
        length = self.beats[0].signal.size
        for i, beat in enumerate(self.beats):
            if beat.signal.size != length:
                raise DataError(
                    f"inconsistent signal length: beat {i} has {beat.signal.size}, expected {length}"
                )

    def __len__(self) -> int:
        return len(self.beats)

    @property
    def signal_len(self) -> int:
        return self.beats[0].signal.size

    def class_histogram(self) -> list[int]:
        counts = [0] * N_CLASSES
        for beat in self.beats:
            counts[beat.label] += 1
        return counts


def _normalize_if_needed(values: np.ndarray) -> np.ndarray:
    if values.min() >= 0.0 and values.max() <= 1.0:
        return values
    low, high = values.min(), values.max()
    if high == low:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def load_csv(path) -> Dataset:
    """Parse a dataset file of `L floats + integer label` rows."""
    beats: list[Beat] = []
    length: int | None = None
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{line_no}: row needs at least one value and a label")
            try:
                values = np.array([float(cell) for cell in row[:-1]])
                raw_label = float(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            if not np.all(np.isfinite(values)):
                raise DataError(f"{path}:{line_no}: non-finite signal value")
            if raw_label != int(raw_label):
                raise DataError(f"{path}:{line_no}: label {row[-1]!r} is not an integer")
            label = int(raw_label)
            if not 0 <= label < N_CLASSES:
                raise DataError(f"{path}:{line_no}: label {label} outside 0..{N_CLASSES - 1}")
            if length is None:
                length = values.size
            elif values.size != length:
                raise DataError(
                    f"{path}:{line_no}: row has {values.size} values, expected {length}"
                )
            beats.append(Beat(signal=_normalize_if_needed(values), label=label))
    if not beats:
        raise DataError(f"{path}: no data rows")
    return Dataset(beats)


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset in the same format load_csv reads (lossless floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for beat in dataset.beats:
            writer.writerow([repr(float(v)) for v in beat.signal] + [beat.label])


def _bump(t: np.ndarray, center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((t - center) / width) ** 2)


def class_templates(length: int) -> np.ndarray:
    """The five noise-free class waveforms, shape [5, length], values in [0, 1].

    Classes differ in bump center, width, count, and polarity: a narrow
    spike, a wide dome, two bumps, a dome with a notch, and a flat baseline
    with a dip.
    """
    t = np.linspace(0.0, 1.0, length)
    templates = np.stack(
        [
            0.15 + 0.80 * _bump(t, 0.5, 0.03),
            0.10 + 0.70 * _bump(t, 0.5, 0.16),
            0.15 + 0.55 * _bump(t, 0.3, 0.05) + 0.55 * _bump(t, 0.7, 0.05),
            0.20 + 0.60 * _bump(t, 0.5, 0.14) - 0.45 * _bump(t, 0.5, 0.04),
            0.55 - 0.40 * _bump(t, 0.35, 0.05),
        ]
    )
    return np.clip(templates, 0.0, 1.0)


def synth_dataset(n_per_class: int, length: int, noise_std: float, seed: int) -> Dataset:
    """Balanced synthetic dataset: templates plus Gaussian noise, clipped to [0, 1]."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    if length < 8:
        raise ValueError(f"length must be >= 8, got {length}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    templates = class_templates(length)
    beats = []
    for label in range(N_CLASSES):
        for _ in range(n_per_class):
            signal = templates[label] + rng.normal(scale=noise_std, size=length)
            beats.append(Beat(signal=np.clip(signal, 0.0, 1.0), label=label))
    return Dataset(beats)


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded, disjoint train/test partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train: list[Beat] = []
    test: list[Beat] = []
    for label in range(N_CLASSES):
        indices = [i for i, b in enumerate(dataset.beats) if b.label == label]
        if not indices:
            continue
        order = rng.permutation(len(indices))
        n_train = int(round(train_fraction * len(indices)))
        for rank, pos in enumerate(order):
            (train if rank < n_train else test).append(dataset.beats[indices[pos]])
    if not train or not test:
        raise ValueError("train_fraction leaves one side of the split empty")
    return Dataset(train), Dataset(test)
