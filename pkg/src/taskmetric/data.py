"""Core domain types and the embedding file formats.

Everything downstream operates on these types: labeled feature datasets,
sampled episodes, metric matrices and their hyperparameters, and the bank
of class prototypes used as far-apart anchors. All types are immutable
after construction (backing arrays are marked read-only) and safe to share
across concurrent workers.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, NotPositiveDefiniteError, ParameterError

UNLABELED = -1

BINARY_MAGIC = b"TEAMEMB1"
_UNLABELED_U32 = 0xFFFFFFFF

SYMMETRY_RTOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.flags.writeable = False
    return out


def check_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    """Elementwise symmetry check: |m[i,j] - m[j,i]| <= rtol * max(1, |m[i,j]|)."""
    diff = np.abs(m - m.T)
    bound = rtol * np.maximum(1.0, np.abs(m))
    return bool(np.all(diff <= bound))


@dataclass(frozen=True)
class EmbeddingDataset:
    """A set of d-dimensional feature vectors with integer class labels.

    Parameters
    ----------
    features : ndarray, shape (n, d)
        Real feature coordinates, all finite.
    labels : ndarray, shape (n,)
        Non-negative class ids; ``UNLABELED`` (-1) marks unlabeled rows.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ParameterError(
                f"features must be a non-empty 2-D array, got shape {feats.shape}"
            )
        if labels.shape != (feats.shape[0],):
            raise ParameterError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} rows"
            )
        if not np.all(np.isfinite(feats)):
            bad = int(np.flatnonzero(~np.isfinite(feats).all(axis=1))[0])
            raise ParameterError(f"non-finite feature value in row {bad}")
        if np.any(labels < UNLABELED):
            raise ParameterError("labels must be non-negative (or -1 for unlabeled)")
        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def classes(self) -> np.ndarray:
        """Sorted ids of the labeled classes present in the dataset."""
        labs = self.labels[self.labels != UNLABELED]
        return np.unique(labs)

    def rows_of_class(self, class_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_id)

    def subset(self, indices: np.ndarray) -> "EmbeddingDataset":
        return EmbeddingDataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class EpisodeConfig:
    """Shape of one N-way K-shot task."""

    n_way: int
    k_shot: int
    n_query_per_class: int
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ParameterError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise ParameterError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.n_query_per_class < 1:
            raise ParameterError(
                f"n_query_per_class must be >= 1, got {self.n_query_per_class}"
            )
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must fit in an unsigned 64-bit integer")

    @property
    def n_query_total(self) -> int:
        return self.n_way * self.n_query_per_class


@dataclass(frozen=True)
class Episode:
    """One sampled task: a balanced support set, a query set and an
    optional pool of unlabeled points.

    Support rows are grouped by class index; every class 0..n_way-1 holds
    the same number of rows. Query labels are retained for scoring only.
    """

    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    unlabeled_x: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        sx = np.asarray(self.support_x, dtype=np.float64)
        sy = np.asarray(self.support_y, dtype=np.int64)
        qx = np.asarray(self.query_x, dtype=np.float64)
        qy = np.asarray(self.query_y, dtype=np.int64)
        if self.unlabeled_x is None:
            ux = np.empty((0, sx.shape[1] if sx.ndim == 2 else 0))
        else:
            ux = np.asarray(self.unlabeled_x, dtype=np.float64)
        if sx.ndim != 2 or qx.ndim != 2 or ux.ndim != 2:
            raise ParameterError("episode arrays must be 2-D")
        d = sx.shape[1]
        if qx.shape[1] != d or (ux.shape[0] > 0 and ux.shape[1] != d):
            raise ParameterError("episode arrays disagree on dimension")
        for name, a in (("support", sx), ("query", qx), ("unlabeled", ux)):
            if a.size and not np.all(np.isfinite(a)):
                raise ParameterError(f"non-finite value in {name} set")
        if sy.shape != (sx.shape[0],) or qy.shape != (qx.shape[0],):
            raise ParameterError("label arrays do not match their feature arrays")
        if sy.size == 0 or sy.min() != 0:
            raise ParameterError(
                "support must cover classes 0..N-1 with equal counts per class"
            )
        counts = np.bincount(sy, minlength=int(sy.max()) + 1)
        if np.any(counts != counts[0]):
            raise ParameterError(
                "support must cover classes 0..N-1 with equal counts per class"
            )
        n_way = int(sy.max()) + 1
        if qy.size and (qy.min() < 0 or qy.max() >= n_way):
            raise ParameterError("query labels must lie in 0..N-1")
        object.__setattr__(self, "support_x", _freeze(sx))
        object.__setattr__(self, "support_y", _freeze(sy))
        object.__setattr__(self, "query_x", _freeze(qx))
        object.__setattr__(self, "query_y", _freeze(qy))
        object.__setattr__(self, "unlabeled_x", _freeze(ux))

    @property
    def n_way(self) -> int:
        return int(self.support_y.max()) + 1

    @property
    def k_shot(self) -> int:
        return self.support_x.shape[0] // self.n_way

    @property
    def dim(self) -> int:
        return self.support_x.shape[1]

    @property
    def n_points(self) -> int:
        return self.support_x.shape[0] + self.query_x.shape[0] + self.unlabeled_x.shape[0]

    def all_points(self) -> np.ndarray:
        """Support, query and unlabeled vectors stacked in that order."""
        return np.concatenate([self.support_x, self.query_x, self.unlabeled_x], axis=0)

    def without_unlabeled(self) -> "Episode":
        if self.unlabeled_x.shape[0] == 0:
            return self
        return Episode(self.support_x, self.support_y, self.query_x, self.query_y)


@dataclass(frozen=True)
class MetricHyperParams:
    """Knobs of the per-episode metric construction.

    ``alpha`` scales the transductive task covariance, ``gamma`` trades the
    pairwise-constraint loss against the prior-regularization loss, ``lam``
    is the cannot-link multiplier, ``prior`` is the reference metric (None
    means identity), ``knn_k`` sizes the nearest-neighbor must-link pool,
    and ``pd_floor`` is the smallest eigenvalue tolerated before repair.
    """

    alpha: float = 2.0
    gamma: float = 0.2
    lam: float = 0.01
    prior: np.ndarray | None = None
    knn_k: int = 3
    pd_floor: float = 1e-6

    def __post_init__(self):
        for name in ("alpha", "gamma", "lam"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be a finite non-negative real, got {v}")
        if self.knn_k < 1:
            raise ParameterError(f"knn_k must be >= 1, got {self.knn_k}")
        if not (self.pd_floor > 0 and math.isfinite(self.pd_floor)):
            raise ParameterError(f"pd_floor must be a small positive real, got {self.pd_floor}")
        if self.prior is not None:
            p = np.asarray(self.prior, dtype=np.float64)
            if p.ndim != 2 or p.shape[0] != p.shape[1]:
                raise ParameterError("prior must be a square matrix")
            if not check_symmetric(p):
                raise ParameterError("prior must be symmetric")
            if float(np.linalg.eigvalsh(p).min()) <= 0:
                raise ParameterError("prior must be positive definite")
            object.__setattr__(self, "prior", _freeze(p))

    def prior_matrix(self, dim: int) -> np.ndarray:
        if self.prior is None:
            return np.eye(dim)
        if self.prior.shape[0] != dim:
            raise ParameterError(
                f"prior is {self.prior.shape[0]}x{self.prior.shape[0]}, data is {dim}-dimensional"
            )
        return self.prior

    def prior_inverse(self, dim: int) -> np.ndarray:
        if self.prior is None:
            return np.eye(dim)
        inv = np.linalg.inv(self.prior_matrix(dim))
        return (inv + inv.T) / 2.0


@dataclass(frozen=True)
class MetricMatrix:
    """A symmetric positive-definite matrix parameterizing a Mahalanobis
    distance. Symmetry and positive definiteness are checked at
    construction; ``shift_applied`` records any diagonal repair performed
    by the closed-form constructor.
    """

    matrix: np.ndarray
    shift_applied: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ParameterError(f"metric must be a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ParameterError("metric contains non-finite entries")
        if not check_symmetric(m):
            raise NotPositiveDefiniteError("metric is not symmetric")
        min_eig = float(np.linalg.eigvalsh(m).min())
        if min_eig <= 0:
            raise NotPositiveDefiniteError(
                f"metric is not positive definite (min eigenvalue {min_eig:.3e})"
            )
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "MetricMatrix":
        return cls(np.eye(dim))


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class mean embeddings of previously seen classes, used as
    far-apart anchors when building cannot-link constraints. May be empty.
    """

    entries: dict

    def __post_init__(self):
        clean = {}
        dim = None
        for cid, vec in self.entries.items():
            v = np.asarray(vec, dtype=np.float64).ravel()
            if dim is None:
                dim = v.shape[0]
            elif v.shape[0] != dim:
                raise ParameterError("prototype bank entries disagree on dimension")
            if not np.all(np.isfinite(v)):
                raise ParameterError(f"non-finite prototype for class {cid}")
            clean[int(cid)] = _freeze(v)
        object.__setattr__(self, "entries", clean)

    def __len__(self) -> int:
        return len(self.entries)

    def vectors(self) -> np.ndarray:
        """Bank prototypes stacked in ascending class-id order, shape (m, d)."""
        if not self.entries:
            return np.empty((0, 0))
        ids = sorted(self.entries)
        return np.stack([self.entries[i] for i in ids], axis=0)

    @classmethod
    def empty(cls) -> "PrototypeBank":
        return cls({})

    @classmethod
    def from_dataset(cls, dataset: EmbeddingDataset) -> "PrototypeBank":
        """Class means of every labeled class in the dataset."""
        entries = {}
        for cid in dataset.classes():
            rows = dataset.rows_of_class(int(cid))
            entries[int(cid)] = dataset.features[rows].mean(axis=0)
        return cls(entries)


# ---------------------------------------------------------------------------
# Embedding file formats
# ---------------------------------------------------------------------------

_FORMAT_ALIASES = {"csv": "csv", "bin": "binary", "binary": "binary"}


def _norm_format(fmt: str) -> str:
    try:
        return _FORMAT_ALIASES[fmt.lower()]
    except KeyError:
        raise ParameterError(f"unknown format {fmt!r}, expected 'csv' or 'bin'") from None


def load_embeddings(path, fmt: str = "csv") -> EmbeddingDataset:
    """Read a dataset from ``path`` in the given format.

    CSV records look like ``label,v1,...,vd`` with ``?`` marking unlabeled
    rows. The binary format carries the ``TEAMEMB1`` magic, little-endian
    u32 count and dimension, then one u32 label (0xFFFFFFFF = unlabeled)
    plus d little-endian f32 values per record.
    """
    path = Path(path)
    if _norm_format(fmt) == "csv":
        return _load_csv(path)
    return _load_binary(path)


def save_embeddings(dataset: EmbeddingDataset, path, fmt: str = "csv") -> None:
    """Write ``dataset`` to ``path``; the result round-trips through
    :func:`load_embeddings` (bit-exactly in the binary format)."""
    path = Path(path)
    if _norm_format(fmt) == "csv":
        _save_csv(dataset, path)
    else:
        _save_binary(dataset, path)


def _load_csv(path: Path) -> EmbeddingDataset:
    try:
        text = path.read_text(encoding="ascii")
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    rows = []
    labels = []
    dim = None
    lineno = 0
    for raw in text.splitlines():
        lineno += 1
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 2:
            raise DataFormatError(f"{path}: row {lineno}: expected 'label,v1,...'")
        if parts[0] == "?":
            label = UNLABELED
        else:
            try:
                label = int(parts[0])
            except ValueError:
                raise DataFormatError(f"{path}: row {lineno}: bad label {parts[0]!r}") from None
            if label < 0:
                raise DataFormatError(f"{path}: row {lineno}: negative label {label}")
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise DataFormatError(f"{path}: row {lineno}: non-numeric value") from None
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise DataFormatError(
                f"{path}: row {lineno}: dimension {len(values)} != {dim} of first row"
            )
        if not all(math.isfinite(v) for v in values):
            raise DataFormatError(f"{path}: row {lineno}: non-finite value")
        rows.append(values)
        labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no records")
    return EmbeddingDataset(np.asarray(rows, dtype=np.float64), np.asarray(labels))


def _save_csv(dataset: EmbeddingDataset, path: Path) -> None:
    lines = []
    for label, row in zip(dataset.labels, dataset.features):
        head = "?" if label == UNLABELED else str(int(label))
        lines.append(head + "," + ",".join(f"{v:.9g}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _load_binary(path: Path) -> EmbeddingDataset:
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if len(blob) < 16:
        raise DataFormatError(f"{path}: too short for a valid header")
    if blob[:8] != BINARY_MAGIC:
        raise DataFormatError(f"{path}: unknown magic {blob[:8]!r}")
    n, d = struct.unpack_from("<II", blob, 8)
    if n == 0:
        raise DataFormatError(f"{path}: no records")
    record = np.dtype([("label", "<u4"), ("values", "<f4", (d,))])
    expected = 16 + n * record.itemsize
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {n} records of dim {d}, got {len(blob)}"
        )
    raw = np.frombuffer(blob, dtype=record, count=n, offset=16)
    labels = raw["label"].astype(np.int64)
    labels[labels == _UNLABELED_U32] = UNLABELED
    values = raw["values"].astype(np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])
        raise DataFormatError(f"{path}: non-finite value in record {bad}")
    return EmbeddingDataset(values, labels)


def _save_binary(dataset: EmbeddingDataset, path: Path) -> None:
    if np.any(dataset.labels >= _UNLABELED_U32):
        raise ParameterError("labels too large for the binary format")
    n, d = dataset.features.shape
    record = np.dtype([("label", "<u4"), ("values", "<f4", (d,))])
    out = np.empty(n, dtype=record)
    labels = dataset.labels.copy()
    labels[labels == UNLABELED] = _UNLABELED_U32
    out["label"] = labels.astype(np.uint32)
    out["values"] = dataset.features.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(out.tobytes())
