"""Datasets of fixed-length accelerometer windows and their on-disk format.

A dataset is a flat list of labelled windows, each tagged with the animal it
was recorded from so that cross-validation can hold complete animals out.
On disk it is JSON lines, one window per line:

    {"id": 17, "animal": "animal_03", "label": 2, "samples": [[x,y,z], ...]}

``save_dataset`` additionally writes a first metadata line carrying the class
names and window geometry so a round trip is lossless; ``load_dataset``
accepts files with or without it (bare record files infer the class count
from the labels).

The synthetic generator produces three behaviour-like classes from an
accelerometer-ish signal model: sustained high-amplitude low-frequency
oscillation (class 0), near-constant posture (class 1), and sparse short
bursts over a quiet baseline (class 2). Classes 1 and 2 overlap on purpose:
windows whose bursts are faint are genuinely ambiguous, which is what makes
soft teacher labels informative downstream. Per-animal gain, offset, and
frequency habits make the held-out-animal setting non-trivial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataContractError, InvalidInput

DEFAULT_CLASS_NAMES = ("grazing", "resting", "alia")
_HEADER_FORMAT = "kdq7-dataset-v1"

# class mix for the synthetic generator: imbalanced on purpose
_CLASS_FRACTIONS = (0.50, 0.35, 0.15)


@dataclass(frozen=True)
class Datapoint:
    id: int
    animal_id: str
    label: int
    samples: np.ndarray  # (N, input_dim) float64, read-only

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if s.ndim != 2:
            raise InvalidInput(f"datapoint {self.id}: samples must be 2-D")
        if not np.all(np.isfinite(s)):
            raise InvalidInput(f"datapoint {self.id}: non-finite samples")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class Dataset:
    num_classes: int
    class_names: tuple[str, ...]
    sequence_length: int
    input_dim: int
    datapoints: tuple[Datapoint, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidInput("num_classes must be >= 1")
        if len(self.class_names) != self.num_classes:
            raise InvalidInput("class_names length must equal num_classes")
        by_id = {}
        for dp in self.datapoints:
            if dp.id in by_id:
                raise DataContractError(f"duplicate datapoint id {dp.id}")
            if not 0 <= dp.label < self.num_classes:
                raise DataContractError(
                    f"datapoint {dp.id}: label {dp.label} out of range [0, {self.num_classes})"
                )
            if dp.samples.shape != (self.sequence_length, self.input_dim):
                raise DataContractError(
                    f"datapoint {dp.id}: samples shape {dp.samples.shape} != "
                    f"({self.sequence_length}, {self.input_dim})"
                )
            by_id[dp.id] = dp
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "datapoints", tuple(self.datapoints))
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.datapoints)

    @property
    def animal_ids(self) -> list[str]:
        return sorted({dp.animal_id for dp in self.datapoints})

    def by_id(self, dp_id: int) -> Datapoint:
        try:
            return self._by_id[dp_id]
        except KeyError:
            raise InvalidInput(f"unknown datapoint id {dp_id}") from None

    def gather(self, ids: Iterable[int]) -> tuple[np.ndarray, np.ndarray, list[int]]:
        """Stack windows for the given ids, ascending-id order.

        Returns (X, y, sorted_ids) with X shaped (num, N, input_dim). The
        internal sort makes every downstream statistic independent of the
        order the caller happened to hold the ids in.
        """
        sorted_ids = sorted(set(ids))
        if not sorted_ids:
            raise InvalidInput("empty id subset")
        dps = [self.by_id(i) for i in sorted_ids]
        x = np.stack([dp.samples for dp in dps])
        y = np.array([dp.label for dp in dps], dtype=np.int64)
        return x, y, sorted_ids


@dataclass(frozen=True)
class NormStats:
    """Per-axis normalization: normalized = (a - mean) * inv_std."""

    mean: np.ndarray      # (input_dim,) float32
    inv_std: np.ndarray   # (input_dim,) float32

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float32)
        s = np.asarray(self.inv_std, dtype=np.float32)
        if m.ndim != 1 or m.shape != s.shape:
            raise InvalidInput("norm stats must be matching 1-D vectors")
        if not np.all(s > 0):
            raise InvalidInput("inv_std must be positive")
        m.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "inv_std", s)


def compute_norm_stats(dataset: Dataset, ids: Iterable[int]) -> NormStats:
    """Per-axis mean and inverse std over every sample of the id subset.

    The std is floored at 1e-6 before inversion so a constant axis stays
    finite. Ids are sorted internally, so any permutation of the same subset
    yields bit-identical stats.
    """
    x, _, _ = dataset.gather(ids)
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), 1e-6)
    return NormStats(mean=mean.astype(np.float32), inv_std=(1.0 / std).astype(np.float32))


def loao_splits(dataset: Dataset) -> list[tuple[list[int], list[int]]]:
    """Leave-one-animal-out folds, ordered by animal id (lexicographic).

    Each fold is (train_ids, validation_ids); the validation folds are
    disjoint and jointly cover the dataset.
    """
    animals = dataset.animal_ids
    if len(animals) < 2:
        raise InvalidInput("leave-one-animal-out needs at least 2 animals")
    folds = []
    for animal in animals:
        val = sorted(dp.id for dp in dataset.datapoints if dp.animal_id == animal)
        train = sorted(dp.id for dp in dataset.datapoints if dp.animal_id != animal)
        folds.append((train, val))
    return folds


# ---------------------------------------------------------------------------
# on-disk format


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": _HEADER_FORMAT,
            "num_classes": dataset.num_classes,
            "class_names": list(dataset.class_names),
            "sequence_length": dataset.sequence_length,
            "input_dim": dataset.input_dim,
        }
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for dp in dataset.datapoints:
            rec = {
                "id": dp.id,
                "animal": dp.animal_id,
                "label": dp.label,
                "samples": dp.samples.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _record_error(lineno: int, msg: str) -> DataContractError:
    return DataContractError(f"line {lineno}: {msg}")


def load_dataset(path) -> Dataset:
    header = None
    records: list[tuple[int, dict]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise _record_error(lineno, f"invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise _record_error(lineno, "expected a JSON object")
            if lineno == 1 and obj.get("format") == _HEADER_FORMAT:
                header = obj
                continue
            records.append((lineno, obj))

    if not records:
        raise DataContractError(f"{path}: no datapoints")

    datapoints = []
    for lineno, obj in records:
        missing = {"id", "animal", "label", "samples"} - set(obj)
        if missing:
            raise _record_error(lineno, f"missing fields {sorted(missing)}")
        if not isinstance(obj["id"], int) or isinstance(obj["id"], bool):
            raise _record_error(lineno, "id must be an integer")
        if not isinstance(obj["animal"], str):
            raise _record_error(lineno, "animal must be a string")
        if not isinstance(obj["label"], int) or isinstance(obj["label"], bool):
            raise _record_error(lineno, "label must be an integer")
        try:
            samples = np.asarray(obj["samples"], dtype=np.float64)
        except (ValueError, TypeError):
            raise _record_error(lineno, "samples must be a rectangular numeric array") from None
        if samples.ndim != 2:
            raise _record_error(lineno, "samples must be a list of fixed-length rows")
        try:
            datapoints.append(
                Datapoint(id=obj["id"], animal_id=obj["animal"], label=obj["label"], samples=samples)
            )
        except InvalidInput as e:
            raise _record_error(lineno, str(e)) from None

    n = datapoints[0].samples.shape[0]
    dim = datapoints[0].samples.shape[1]
    for (lineno, _), dp in zip(records, datapoints):
        if dp.samples.shape != (n, dim):
            raise _record_error(
                lineno, f"samples shape {dp.samples.shape} differs from first record ({n}, {dim})"
            )

    if header is not None:
        num_classes = header["num_classes"]
        class_names = tuple(header["class_names"])
        if header.get("sequence_length") != n or header.get("input_dim") != dim:
            raise DataContractError("header geometry does not match records")
    else:
        num_classes = max(dp.label for dp in datapoints) + 1
        class_names = tuple(f"class_{k}" for k in range(num_classes))

    try:
        return Dataset(
            num_classes=num_classes,
            class_names=class_names,
            sequence_length=n,
            input_dim=dim,
            datapoints=tuple(datapoints),
        )
    except (DataContractError, InvalidInput) as e:
        raise DataContractError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# synthetic generation


def _class_counts(windows_per_animal: int) -> list[int]:
    n0 = round(_CLASS_FRACTIONS[0] * windows_per_animal)
    n1 = round(_CLASS_FRACTIONS[1] * windows_per_animal)
    n2 = windows_per_animal - n0 - n1
    if windows_per_animal >= 3 and min(n0, n1, n2) < 1:
        # tiny counts: keep every class populated
        n0, n1 = max(n0, 1), max(n1, 1)
        n2 = windows_per_animal - n0 - n1
    return [n0, n1, n2]


def synth_gen(
    num_animals: int,
    windows_per_animal: int,
    sequence_length: int = 64,
    seed: int = 0,
) -> Dataset:
    """Three-class synthetic accelerometer windows, fully seeded.

    Class 0 dominates the mix (roughly 50/35/15). Sample values are rounded
    to 4 decimals so the JSONL form is compact and round-trips exactly.
    """
    if num_animals < 1 or windows_per_animal < 1 or sequence_length < 8:
        raise InvalidInput("num_animals, windows_per_animal >= 1 and sequence_length >= 8")
    rng = np.random.default_rng(seed)
    n = sequence_length
    t = np.arange(n, dtype=np.float64)
    counts = _class_counts(windows_per_animal)

    def plateau_envelope(length: int) -> np.ndarray:
        # flat burst with short cosine ramps; keeps burst power visible
        ramp = max(2, length // 5)
        env = np.ones(length)
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[:ramp] = edge
        env[-ramp:] = edge[::-1]
        return env

    datapoints = []
    next_id = 0
    for a in range(num_animals):
        animal = f"animal_{a:02d}"
        # stable per-animal habits: overall gain, resting posture, pace
        gain = rng.uniform(0.8, 1.2)
        posture = rng.normal(0.0, 0.15, size=3)
        pace = rng.uniform(0.9, 1.1)

        labels = np.repeat(np.arange(3), counts)
        labels = labels[rng.permutation(labels.size)]
        for label in labels:
            if label == 0:
                # vigorous sustained oscillation, axis-coupled
                noise = rng.normal(0.0, 0.08, size=(n, 3))
                freq = 0.06 * pace * rng.uniform(0.85, 1.15)
                phase = rng.uniform(0.0, 2 * np.pi)
                amp = gain * rng.uniform(1.0, 1.3)
                axis_amp = np.array([1.0, 0.65, 0.45]) * amp
                axis_phase = phase + np.array([0.0, 1.3, 2.1])
                sig = axis_amp * np.sin(2 * np.pi * freq * t[:, None] + axis_phase)
                window = sig + posture + noise
            elif label == 1:
                # quiet posture with a slow drift
                noise = rng.normal(0.0, 0.055, size=(n, 3))
                drift = 0.035 * gain * np.sin(2 * np.pi * 0.01 * pace * t + rng.uniform(0, 2 * np.pi))
                window = posture + np.array([0.0, 0.0, 0.3]) * gain + drift[:, None] + noise
            else:
                # restless baseline (more motion noise than resting) with fast
                # bursts; faint-burst windows genuinely shade into the quiet class
                noise = rng.normal(0.0, 0.14, size=(n, 3))
                window = posture + np.array([0.0, 0.0, 0.3]) * gain + noise
                faint = rng.random() < 0.2
                for _ in range(int(rng.integers(2, 4))):
                    blen = int(rng.integers(max(6, n // 6), max(8, n // 3)))
                    start = int(rng.integers(0, n - blen))
                    bfreq = 0.3 * pace * rng.uniform(0.85, 1.15)
                    bamp = gain * rng.uniform(0.45, 0.85) * (0.45 if faint else 1.0)
                    burst = bamp * plateau_envelope(blen) * np.sin(
                        2 * np.pi * bfreq * np.arange(blen) + rng.uniform(0, 2 * np.pi)
                    )
                    window[start : start + blen] += burst[:, None] * np.array([1.0, 0.55, 0.35])
            datapoints.append(
                Datapoint(
                    id=next_id,
                    animal_id=animal,
                    label=int(label),
                    samples=np.round(window, 4),
                )
            )
            next_id += 1

    return Dataset(
        num_classes=3,
        class_names=DEFAULT_CLASS_NAMES,
        sequence_length=n,
        input_dim=3,
        datapoints=tuple(datapoints),
    )
