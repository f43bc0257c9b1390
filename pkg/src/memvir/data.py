"""Synthetic class-disjoint datasets, balanced batch sampling and CSV feature files."""

import csv
import gzip
import io
from dataclasses import dataclass

import numpy as np


class DatasetError(ValueError):
    pass


class InvalidSpec(DatasetError):
    pass


class InsufficientClasses(DatasetError):
    pass


class InsufficientSamples(DatasetError):
    pass


class ParseError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if inputs.ndim != 2:
            inputs = inputs.reshape(labels.shape[0], -1)
        if inputs.shape[0] != labels.shape[0]:
            raise SchemaError(f"{inputs.shape[0]} rows but {labels.shape[0]} labels")
        _, counts = np.unique(labels, return_counts=True)
        if counts.size and counts.min() < 2:
            raise DatasetError("every class needs at least two samples")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def class_ids(self):
        return np.unique(self.labels)

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def dense_labels(self):
        """Labels remapped to 0..C-1 in sorted class-id order."""
        return np.searchsorted(self.class_ids, self.labels)

    def restrict(self, classes):
        keep = np.isin(self.labels, classes)
        return Dataset(self.inputs[keep], self.labels[keep])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.labels, other.labels) and np.array_equal(self.inputs, other.inputs)


@dataclass(frozen=True)
class SyntheticSpec:
    num_train_classes: int = 20
    num_test_classes: int = 20
    samples_per_class: int = 20
    input_dim: int = 32
    cluster_spread: float = 1.0
    center_scale: float = 1.0
    seed: int = 0

    def validate(self):
        for name in ("num_train_classes", "num_test_classes", "samples_per_class", "input_dim"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if self.samples_per_class < 2:
            raise InvalidSpec("samples_per_class must be >= 2 for retrieval evaluation")
        if not (self.cluster_spread > 0 and self.center_scale > 0):
            raise InvalidSpec("cluster_spread and center_scale must be positive")


def gen_synthetic(spec: SyntheticSpec, rng=None):
    """Gaussian clusters split into disjoint train (ids 0..Ctr-1) and test (Ctr..) classes."""
    spec.validate()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    n_classes = spec.num_train_classes + spec.num_test_classes
    centers = rng.normal(0.0, spec.center_scale, size=(n_classes, spec.input_dim))
    labels = np.repeat(np.arange(n_classes), spec.samples_per_class)
    noise = rng.normal(0.0, spec.cluster_spread, size=(labels.size, spec.input_dim))
    inputs = centers[labels] + noise
    is_train = labels < spec.num_train_classes
    return Dataset(inputs[is_train], labels[is_train]), Dataset(inputs[~is_train], labels[~is_train])


def subset_classes(ds: Dataset, ratio, rng: np.random.Generator) -> Dataset:
    """Keep a random ``ratio`` fraction of the classes (at least one)."""
    if not 0 < ratio <= 1:
        raise InvalidSpec(f"class ratio must lie in (0, 1], got {ratio}")
    ids = ds.class_ids
    n = max(1, int(round(ratio * ids.size)))
    if n == ids.size:
        return ds
    chosen = np.sort(rng.choice(ids, size=n, replace=False))
    return ds.restrict(chosen)


def sample_batch(ds: Dataset, batch_size, classes_per_batch, rng: np.random.Generator):
    """Balanced batch: ``classes_per_batch`` distinct classes, equal samples each.

    Returns the row indices into ``ds``.
    """
    if classes_per_batch < 1 or batch_size % classes_per_batch:
        raise ValueError(f"batch size {batch_size} not divisible by classes_per_batch {classes_per_batch}")
    ids = ds.class_ids
    if classes_per_batch > ids.size:
        raise InsufficientClasses(f"{classes_per_batch} classes requested, dataset has {ids.size}")
    per_class = batch_size // classes_per_batch
    chosen = rng.choice(ids, size=classes_per_batch, replace=False)
    rows = []
    for c in chosen:
        members = np.flatnonzero(ds.labels == c)
        if members.size < per_class:
            raise InsufficientSamples(f"class {c} has {members.size} samples, need {per_class}")
        rows.append(rng.choice(members, size=per_class, replace=False))
    return np.concatenate(rows)


def _open_text(path, mode):
    path = str(path)
    if path.endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), newline="")
    return open(path, mode, newline="")


def save_dataset(ds: Dataset, path, prefix="f"):
    """CSV with header ``label,f0,f1,...``; floats are written with ``repr`` for exact round trips."""
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"{prefix}{j}" for j in range(ds.input_dim)])
        for label, row in zip(ds.labels.tolist(), ds.inputs.tolist()):
            writer.writerow([label] + [repr(v) for v in row])


def load_dataset(path) -> Dataset:
    with _open_text(path, "r") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header line") from None
        if not header or header[0] != "label":
            raise SchemaError(f"{path}: header must start with 'label'")
        width = len(header) - 1
        labels, rows = [], []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width + 1:
                raise SchemaError(f"{path}: row at line {line_no} has {len(record) - 1} features, expected {width}")
            try:
                labels.append(int(record[0]))
                rows.append([float(v) for v in record[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    inputs = np.asarray(rows, dtype=np.float64).reshape(len(rows), width)
    return Dataset(inputs, np.asarray(labels, dtype=np.int64))
