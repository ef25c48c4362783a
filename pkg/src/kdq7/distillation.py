"""Teacher soft labels: generation, persistence, and the two-step procedure.

A teacher is anything that maps a batch of windows to logits: a bigger
GRU-MLP, the student itself (self-distillation), or a file of logits
produced by some external model. Logits are stored raw, not softened;
the temperature belongs to the training objective, so keeping the logits
pre-softmax means one stored set serves every temperature.

Soft labels travel as CSV (``id,logit_0,...``) so they can cross tool
boundaries; values are written with round-trip precision and re-read
bit-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import Dataset
from .errors import DataContractError, InvalidInput
from .model import GruMlpModel
from .training import KdConfig, TrainConfig, forward_batch_float, train

Teacher = "GruMlpModel | Callable[[np.ndarray], np.ndarray]"


@dataclass(frozen=True)
class SoftLabelSet:
    """Teacher logits keyed by datapoint id.

    ``provenance`` is a free-text descriptor of where the logits came from;
    it is for reports and logs, not round-tripped through the CSV form.
    """

    num_classes: int
    records: dict = field(repr=False)
    provenance: str = ""

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidInput("num_classes must be >= 1")
        frozen = {}
        for dp_id, logits in self.records.items():
            v = np.asarray(logits, dtype=np.float32)
            if v.shape != (self.num_classes,):
                raise InvalidInput(
                    f"soft label for id {dp_id}: expected {self.num_classes} logits, got shape {v.shape}"
                )
            if not np.all(np.isfinite(v)):
                raise InvalidInput(f"soft label for id {dp_id}: non-finite logits")
            v.flags.writeable = False
            frozen[int(dp_id)] = v
        object.__setattr__(self, "records", frozen)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[int]:
        return sorted(self.records)


def _teacher_logits(teacher, windows: np.ndarray) -> np.ndarray:
    if isinstance(teacher, GruMlpModel):
        return forward_batch_float(teacher, windows)
    if callable(teacher):
        return np.asarray(teacher(windows), dtype=np.float32)
    raise InvalidInput("teacher must be a GruMlpModel or a callable windows -> logits")


def generate_soft_labels(
    teacher, dataset: Dataset, ids: Sequence[int] | None = None, provenance: str = ""
) -> SoftLabelSet:
    """Run the teacher over the given ids (default: the whole dataset).

    Raises if the teacher's class count disagrees with the dataset's.
    """
    if isinstance(teacher, GruMlpModel) and teacher.arch.num_classes != dataset.num_classes:
        raise InvalidInput(
            f"teacher has {teacher.arch.num_classes} classes, dataset has {dataset.num_classes}"
        )
    if ids is None:
        ids = [dp.id for dp in dataset.datapoints]
    x, _, sorted_ids = dataset.gather(ids)
    logits = _teacher_logits(teacher, x)
    if logits.shape != (len(sorted_ids), dataset.num_classes):
        raise InvalidInput(
            f"teacher produced shape {logits.shape}, expected ({len(sorted_ids)}, {dataset.num_classes})"
        )
    records = {dp_id: logits[i] for i, dp_id in enumerate(sorted_ids)}
    return SoftLabelSet(num_classes=dataset.num_classes, records=records, provenance=provenance)


def save_soft_labels(labels: SoftLabelSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"logit_{k}" for k in range(labels.num_classes)])
        for dp_id in labels.ids():
            row = labels.records[dp_id]
            # float32 -> float is exact, and repr() round-trips, so the
            # reload is bit-identical
            writer.writerow([dp_id] + [repr(float(v)) for v in row])


def load_soft_labels(path) -> SoftLabelSet:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataContractError(f"{path}: empty soft-label file") from None
        want = ["id"] + [f"logit_{k}" for k in range(len(header) - 1)]
        if header != want or len(header) < 2:
            raise DataContractError(f"{path}: bad header {header!r}")
        num_classes = len(header) - 1
        records = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != num_classes + 1:
                raise DataContractError(f"{path} line {lineno}: expected {num_classes + 1} fields")
            try:
                dp_id = int(row[0])
                logits = np.array([float(v) for v in row[1:]], dtype=np.float32)
            except ValueError as exc:
                raise DataContractError(f"{path} line {lineno}: {exc}") from None
            if dp_id in records:
                raise DataContractError(f"{path} line {lineno}: duplicate id {dp_id}")
            if not np.all(np.isfinite(logits)):
                raise DataContractError(f"{path} line {lineno}: non-finite logits")
            records[dp_id] = logits
    return SoftLabelSet(num_classes=num_classes, records=records, provenance=str(path))


def distill(
    dataset: Dataset,
    train_ids: Sequence[int],
    student_arch,
    cfg: TrainConfig,
    kd: KdConfig,
    soft_labels: SoftLabelSet,
    val_ids: Sequence[int] | None = None,
    log_path=None,
) -> GruMlpModel:
    """Train a student against hard labels plus the given teacher logits.

    Every training id must be covered by the soft-label set; a gap is an
    error rather than a silent fallback (train() enforces and reports it).
    """
    if soft_labels.num_classes != dataset.num_classes:
        raise InvalidInput(
            f"soft labels have {soft_labels.num_classes} classes, dataset has {dataset.num_classes}"
        )
    return train(
        dataset, train_ids, student_arch, cfg,
        kd=kd, soft_labels=soft_labels.records,
        val_ids=val_ids, log_path=log_path,
    )


def self_distill(
    dataset: Dataset,
    train_ids: Sequence[int],
    arch,
    cfg: TrainConfig,
    kd: KdConfig,
    val_ids: Sequence[int] | None = None,
    log_path=None,
) -> GruMlpModel:
    """Two generations with the same seed: the model teaches itself.

    Generation one trains without soft labels, produces logits on the
    training split, and a fresh same-architecture student trains against
    them. Fully deterministic given the config.
    """
    first = train(dataset, train_ids, arch, cfg)
    labels = generate_soft_labels(
        first, dataset, ids=train_ids, provenance=f"self seed={cfg.seed}"
    )
    return distill(
        dataset, train_ids, arch, cfg, kd, labels, val_ids=val_ids, log_path=log_path
    )
