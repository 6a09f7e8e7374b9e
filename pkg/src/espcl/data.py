"""Class-incremental task streams from generated Gaussians or local files."""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import DTYPE, rng_stream


class DataFormatError(ValueError):
    pass


@dataclass
class TaskDataset:
    task_id: int
    classes: tuple
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def __len__(self):
        return len(self.y_train)


@dataclass
class TaskStream:
    tasks: list
    order: tuple
    class_count: int

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def input_dim(self):
        return self.tasks[0].x_train.shape[1]


@dataclass
class GaussianSpec:
    """Isotropic Gaussian classes.

    Without explicit ``means`` the classes sit at ``radius * e_k`` (vertices
    of a regular simplex, pairwise distance ``radius * sqrt(2)``) when
    ``dims >= class_count``, otherwise evenly on a circle in the first two
    dimensions.
    """

    class_count: int = 10
    dims: int = 16
    stddev: float = 1.0 / 3.0
    train_per_class: int = 500
    test_per_class: int = 200
    seed: int = 0
    radius: float = 1.0
    means: list = field(default=None)

    def mean_vectors(self):
        if self.means is not None:
            m = np.asarray(self.means, dtype=DTYPE)
            if m.shape != (self.class_count, self.dims):
                raise ValueError(f"means must have shape {(self.class_count, self.dims)}")
        elif self.dims >= self.class_count:
            m = self.radius * np.eye(self.class_count, self.dims)
        else:
            if self.dims < 2:
                raise ValueError("need dims >= 2 to place class means on a circle")
            angle = 2 * np.pi * np.arange(self.class_count) / self.class_count
            m = np.zeros((self.class_count, self.dims))
            m[:, 0] = self.radius * np.cos(angle)
            m[:, 1] = self.radius * np.sin(angle)
        if len({tuple(r) for r in m}) != len(m):
            raise ValueError("class means must be distinct")
        if self.stddev <= 0:
            raise ValueError("stddev must be positive")
        return m


def class_groups(class_count, tasks):
    if tasks < 1 or class_count % tasks:
        raise ValueError(f"{class_count} classes cannot be split evenly into {tasks} tasks")
    k = class_count // tasks
    return [tuple(range(t * k, (t + 1) * k)) for t in range(tasks)]


def _check_order(order, tasks):
    order = tuple(range(tasks)) if order is None else tuple(int(o) for o in order)
    if sorted(order) != list(range(tasks)):
        raise ValueError(f"task order {order} is not a permutation of range({tasks})")
    return order


def _split_into_tasks(x_tr, y_tr, x_te, y_te, class_count, tasks, order):
    order = _check_order(order, tasks)
    groups = class_groups(class_count, tasks)
    out = []
    for tid, g in enumerate(order):
        cls = groups[g]
        tr = np.isin(y_tr, cls)
        te = np.isin(y_te, cls)
        out.append(TaskDataset(tid, cls, x_tr[tr], y_tr[tr], x_te[te], y_te[te]))
    return TaskStream(out, order, class_count)


def generate_gaussian_stream(spec, tasks=5, order=None):
    means = spec.mean_vectors()
    class_groups(spec.class_count, tasks)
    rng = rng_stream(spec.seed, "data")
    n_tr, n_te = spec.train_per_class, spec.test_per_class
    xs_tr, xs_te = [], []
    for c in range(spec.class_count):
        x = means[c] + spec.stddev * rng.standard_normal((n_tr + n_te, spec.dims))
        xs_tr.append(x[:n_tr])
        xs_te.append(x[n_tr:])
    y_tr = np.repeat(np.arange(spec.class_count), n_tr)
    y_te = np.repeat(np.arange(spec.class_count), n_te)
    return _split_into_tasks(
        np.concatenate(xs_tr), y_tr, np.concatenate(xs_te), y_te, spec.class_count, tasks, order
    )


def read_labeled_csv(path):
    """Parse ``label,f1,f2,...`` rows; errors name the 1-based line."""
    labels, rows, width = [], [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                label = int(rec[0])
                feats = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if not feats:
                raise DataFormatError(f"{path}: line {lineno}: no feature columns")
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} features, found {len(feats)}"
                )
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=DTYPE), np.array(labels, dtype=np.int64)


_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise DataFormatError(f"{path}: bad IDX magic number {raw[:4].hex()}")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[raw[2]])
    body = raw[4 + 4 * ndim :]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(body) != expected:
        raise DataFormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(dims)


def read_idx_pair(images_path, labels_path):
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1 or labels.shape[0] != images.shape[0]:
        raise DataFormatError(f"{labels_path}: labels do not match {images_path}")
    x = images.reshape(images.shape[0], -1).astype(DTYPE) / 255.0
    return x, labels.astype(np.int64)


def _check_labels(y, class_count, path):
    bad = y[(y < 0) | (y >= class_count)]
    if bad.size:
        raise DataFormatError(f"{path}: unknown label {int(bad[0])} (classes 0..{class_count - 1})")


@dataclass
class TabularFile:
    path: str
    format: str = "csv"
    labels_path: str = None
    test_path: str = None
    test_labels_path: str = None


def _read(path, fmt, labels_path):
    if fmt == "csv":
        return read_labeled_csv(path)
    if fmt == "idx":
        if labels_path is None:
            raise DataFormatError("IDX input needs a labels file")
        return read_idx_pair(path, labels_path)
    raise DataFormatError(f"unknown tabular format {fmt!r}")


def load_tabular_stream(file, tasks, order=None, test_fraction=0.2, seed=0):
    """Load a labeled CSV or IDX pair and split it into class-incremental tasks.

    CSV features are min-max scaled per column (constant columns map to 0);
    IDX pixels are divided by 255. Without a separate test file, each class
    is split into train/test with ``test_fraction`` using ``seed``.
    """
    x, y = _read(file.path, file.format, file.labels_path)
    present = np.unique(y)
    if present.min() < 0:
        raise DataFormatError(f"{file.path}: negative label {int(present.min())}")
    class_count = int(present.max()) + 1
    missing = sorted(set(range(class_count)) - set(present.tolist()))
    if missing:
        raise DataFormatError(
            f"{file.path}: labels must form a contiguous 0-based range; missing {missing[:5]}"
        )
    if file.test_path:
        x_te, y_te = _read(file.test_path, file.format, file.test_labels_path)
        if x_te.shape[1] != x.shape[1]:
            raise DataFormatError(f"{file.test_path}: feature width differs from {file.path}")
        _check_labels(y_te, class_count, file.test_path)
        x_tr, y_tr = x, y
    else:
        rng = rng_stream(seed, "split")
        test_mask = np.zeros(len(y), dtype=bool)
        for c in range(class_count):
            idx = np.flatnonzero(y == c)
            n_te = int(np.floor(test_fraction * len(idx)))
            test_mask[rng.permutation(idx)[:n_te]] = True
        x_tr, y_tr, x_te, y_te = x[~test_mask], y[~test_mask], x[test_mask], y[test_mask]
    if file.format == "csv":
        lo, hi = x_tr.min(axis=0), x_tr.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        x_tr = (x_tr - lo) / span
        x_te = np.clip((x_te - lo) / span, 0.0, 1.0)
    return _split_into_tasks(x_tr, y_tr, x_te, y_te, class_count, tasks, order)
