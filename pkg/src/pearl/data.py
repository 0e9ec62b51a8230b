"""Embedding/label storage, file I/O, split planning, and synthetic corpora.

File formats:
  CSV     header ``id,label,e0,...,e{d-1}``, UTF-8, one instance per row.
  binary  "PEAR v1": magic ``PEAR``, version byte 1, dtype byte 1 (float32),
          two zero bytes, u32 n, u32 d (little-endian), n*d float32 values
          row-major, then ``PLBL``, u32 n, n signed 32-bit labels. Label -1
          marks an unlabeled row.

Labels are remapped to a dense [0, C) id space at load time; the original
label values are kept in ``LabeledDataset.label_names`` so that reports and
binary round-trips can restore them.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PEAR"
LABEL_MAGIC = b"PLBL"
VERSION = 1
DTYPE_F32 = 1
UNLABELED = -1


class DataFormatError(ValueError):
    """Malformed input file; the message names the first offending row/byte."""


class StratificationError(ValueError):
    """A class has too few members for the requested fold count."""


class BudgetError(ValueError):
    """Label budget cannot be satisfied by the available rows."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense (n, d) float32 matrix, one embedding per row. All entries finite."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got ndim={v.ndim}")
        if v.shape[1] < 1:
            raise ValueError("embedding dimensionality must be >= 1")
        if v.size and not np.isfinite(v).all():
            bad = int(np.flatnonzero(~np.isfinite(v))[0])
            raise ValueError(f"non-finite value at row {bad // v.shape[1]}")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabeledDataset:
    """Embeddings plus dense integer class labels.

    ``labels[i]`` is in [0, C) for labeled rows and -1 for unlabeled ones.
    ``label_names[c]`` holds the original label value for dense id ``c``.
    ``meta`` is a free-form side table (source ids, generator warnings).
    """

    embeddings: EmbeddingMatrix
    labels: np.ndarray
    C: int
    label_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels, dtype=np.int32)
        if lab.shape != (self.embeddings.n,):
            raise ValueError(
                f"labels length {lab.shape} does not match {self.embeddings.n} rows"
            )
        labeled = lab[lab != UNLABELED]
        if labeled.size:
            if labeled.min() < 0 or labeled.max() >= self.C:
                raise ValueError("class id out of range [0, C)")
            present = np.unique(labeled)
            if present.size != self.C:
                missing = sorted(set(range(self.C)) - set(present.tolist()))
                raise ValueError(f"class {missing[0]} has no rows")
        elif self.C != 0:
            raise ValueError("C > 0 but no labeled rows")
        if self.label_names and len(self.label_names) != self.C:
            raise ValueError("label_names length must equal C")
        object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.embeddings.n

    @property
    def d(self) -> int:
        return self.embeddings.d


@dataclass(frozen=True)
class SplitPlan:
    """Per-row fold assignment for stratified F-fold cross-validation."""

    fold_of: np.ndarray
    F: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)


@dataclass(frozen=True)
class BudgetSample:
    """A class-balanced labeled subset split into train and validation rows."""

    train_indices: np.ndarray
    val_indices: np.ndarray
    budget: int


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for the desk-scale synthetic corpus.

    Class means are ``separation`` times orthonormal directions; each instance
    adds isotropic noise with std ``noise_sigma`` and ``confounder_gamma``
    times a shared nuisance direction scaled by a per-instance standard
    normal draw.
    """

    C: int
    d: int
    n_per_class: int
    separation: float = 1.0
    noise_sigma: float = 0.5
    confounder_gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 2 or self.d < 2 or self.n_per_class < 1:
            raise ValueError("requires C >= 2, d >= 2, n_per_class >= 1")
        for name in ("separation", "noise_sigma", "confounder_gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _remap_labels(raw, sort_key=None):
    """Map raw label values to dense ids [0, C) in sorted order.

    Returns (dense int32 array, tuple of original values). Raw value -1 (or
    the string "-1") is passed through as the unlabeled marker for ints.
    """
    uniq = sorted({v for v in raw if v != UNLABELED}, key=sort_key)
    index = {v: i for i, v in enumerate(uniq)}
    dense = np.fromiter(
        (UNLABELED if v == UNLABELED else index[v] for v in raw),
        dtype=np.int32,
        count=len(raw),
    )
    return dense, tuple(uniq)


def _load_csv(path: Path) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("malformed header: empty file") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "label":
            raise DataFormatError(f"malformed header: {header!r}")
        d = len(header) - 2
        expected = [f"e{i}" for i in range(d)]
        if header[2:] != expected:
            raise DataFormatError(f"malformed header: {header!r}")

        ids, labels, rows = [], [], []
        for i, row in enumerate(reader):
            if len(row) != d + 2:
                raise DataFormatError(f"ragged row at row {i}")
            try:
                vals = [float(s) for s in row[2:]]
            except ValueError:
                raise DataFormatError(f"unparseable value at row {i}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"non-finite value at row {i}")
            ids.append(row[0])
            labels.append(row[1])
            rows.append(vals)

    values = np.asarray(rows, dtype=np.float32).reshape(len(rows), d)
    dense, names = _remap_labels(labels)
    return LabeledDataset(
        embeddings=EmbeddingMatrix(values),
        labels=dense,
        C=len(names),
        label_names=names,
        meta={"ids": ids},
    )


def _load_binary(path: Path) -> LabeledDataset:
    buf = Path(path).read_bytes()
    if len(buf) < 16:
        raise DataFormatError(f"truncated header at byte offset {len(buf)}")
    if buf[0:4] != MAGIC:
        raise DataFormatError("unknown magic bytes at byte offset 0")
    if buf[4] != VERSION:
        raise DataFormatError(f"unsupported version {buf[4]} at byte offset 4")
    if buf[5] != DTYPE_F32:
        raise DataFormatError(f"unsupported dtype {buf[5]} at byte offset 5")
    if buf[6] != 0 or buf[7] != 0:
        raise DataFormatError("nonzero reserved bytes at byte offset 6")
    n, d = struct.unpack_from("<II", buf, 8)
    if d < 1:
        raise DataFormatError("dimensionality 0 at byte offset 12")
    off = 16
    need = off + 4 * n * d
    if len(buf) < need:
        raise DataFormatError(f"truncated matrix at byte offset {len(buf)}")
    values = np.frombuffer(buf, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise DataFormatError(f"non-finite value at byte offset {off + 4 * bad}")
    off = need
    if buf[off : off + 4] != LABEL_MAGIC:
        raise DataFormatError(f"missing label magic at byte offset {off}")
    (n2,) = struct.unpack_from("<I", buf, off + 4)
    if n2 != n:
        raise DataFormatError(f"label count mismatch at byte offset {off + 4}")
    off += 8
    if len(buf) < off + 4 * n:
        raise DataFormatError(f"truncated labels at byte offset {len(buf)}")
    raw = np.frombuffer(buf, dtype="<i4", count=n, offset=off)
    off += 4 * n
    if len(buf) != off:
        raise DataFormatError(f"trailing bytes at byte offset {off}")
    if raw.size and raw.min() < UNLABELED:
        bad = int(np.flatnonzero(raw < UNLABELED)[0])
        raise DataFormatError(f"negative label at byte offset {off - 4 * n + 4 * bad}")

    dense, names = _remap_labels(raw.tolist())
    return LabeledDataset(
        embeddings=EmbeddingMatrix(values.astype(np.float32)),
        labels=dense,
        C=len(names),
        label_names=names,
    )


def load_embeddings(path, format: str) -> LabeledDataset:
    """Load a dataset from ``path`` in the named format ("csv" or "binary")."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    if format == "csv":
        return _load_csv(p)
    if format == "binary":
        return _load_binary(p)
    raise ValueError(f"unknown format {format!r}")


def to_pear_bytes(ds: LabeledDataset) -> bytes:
    """Serialize to the PEAR v1 binary layout.

    Labels are written back through ``label_names`` when all original values
    are integers (exact round-trip); otherwise the dense ids are written.
    """
    n, d = ds.n, ds.d
    head = MAGIC + bytes([VERSION, DTYPE_F32, 0, 0]) + struct.pack("<II", n, d)
    body = np.ascontiguousarray(ds.embeddings.values, dtype="<f4").tobytes()
    if ds.label_names and all(isinstance(v, (int, np.integer)) for v in ds.label_names):
        back = np.asarray(ds.label_names, dtype=np.int32)
        out = np.where(ds.labels == UNLABELED, UNLABELED, back[np.clip(ds.labels, 0, None)])
    else:
        out = ds.labels
    tail = LABEL_MAGIC + struct.pack("<I", n) + np.ascontiguousarray(out, dtype="<i4").tobytes()
    return head + body + tail


def save_binary(ds: LabeledDataset, path) -> None:
    Path(path).write_bytes(to_pear_bytes(ds))


def save_csv(ds: LabeledDataset, path) -> None:
    ids = ds.meta.get("ids") or [f"r{i}" for i in range(ds.n)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"e{i}" for i in range(ds.d)])
        for i in range(ds.n):
            lab = ds.labels[i]
            name = str(ds.label_names[lab]) if lab != UNLABELED else str(UNLABELED)
            writer.writerow([ids[i], name] + [str(v) for v in ds.embeddings.values[i]])


# ---------------------------------------------------------------------------
# split planning
# ---------------------------------------------------------------------------

def stratified_kfold(ds: LabeledDataset, F: int, seed: int) -> SplitPlan:
    """Assign every row to one of F folds, balanced within each class.

    Per class, fold sizes differ by at most one. Deterministic for a given
    (dataset, F, seed).
    """
    if F < 2:
        raise ValueError("fold count must be >= 2")
    if np.any(ds.labels == UNLABELED):
        raise ValueError("cannot stratify a dataset with unlabeled rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(ds.n, dtype=np.int32)
    for c in range(ds.C):
        rows = np.flatnonzero(ds.labels == c)
        if rows.size < F:
            raise StratificationError(
                f"class {c} has {rows.size} members, fewer than F={F}"
            )
        order = rng.permutation(rows.size)
        # rotate the starting fold per class so extras spread across folds
        folds = (np.arange(rows.size) + c) % F
        fold_of[rows[order]] = folds
    return SplitPlan(fold_of=fold_of, F=F)


def _apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of ``total`` proportional to ``counts``.

    Ties go to ascending class id; each share is capped at its count.
    """
    counts = counts.astype(np.int64)
    whole = counts.sum()
    if whole == 0 or total == 0:
        return np.zeros_like(counts)
    exact = counts * total / whole
    share = np.floor(exact).astype(np.int64)
    rem = total - share.sum()
    order = np.lexsort((np.arange(counts.size), -(exact - share)))
    for c in order:
        if rem == 0:
            break
        if share[c] < counts[c]:
            share[c] += 1
            rem -= 1
    # spill over if some classes were capped
    while rem > 0:
        room = np.flatnonzero(share < counts)
        share[room[0]] += 1
        rem -= 1
    return share


def sample_label_budget(
    ds: LabeledDataset, train_fold_rows: np.ndarray, budget: int, seed: int
) -> BudgetSample:
    """Draw a class-balanced labeled subset of ``budget`` rows, then carve 15%
    (rounded half-up) into a stratified validation split.

    Per-class quotas are floor(budget / C) with the remainder assigned one per
    class in ascending id order; shortfalls from small classes are
    redistributed round-robin over classes that still have rows.
    """
    rows = np.asarray(train_fold_rows, dtype=np.int64)
    if budget > rows.size:
        raise BudgetError(f"budget {budget} exceeds {rows.size} available rows")
    if budget < 1:
        raise BudgetError("budget must be >= 1")
    labels = ds.labels[rows]
    if np.any(labels == UNLABELED):
        raise BudgetError("training rows contain unlabeled instances")

    C = ds.C
    per_class = [rows[labels == c] for c in range(C)]
    avail = np.array([r.size for r in per_class], dtype=np.int64)

    quota = np.full(C, budget // C, dtype=np.int64)
    quota[: budget % C] += 1
    take = np.minimum(quota, avail)
    shortfall = budget - int(take.sum())
    while shortfall > 0:
        # water-fill so classes that can still grow stay within one of each
        # other; argmin picks the lowest class id on ties
        open_c = np.flatnonzero(take < avail)
        take[open_c[np.argmin(take[open_c])]] += 1
        shortfall -= 1

    val_total = _round_half_up(0.15 * budget)
    val_share = _apportion(take, val_total)

    rng = np.random.default_rng(seed)
    train_parts, val_parts = [], []
    for c in range(C):
        chosen = per_class[c][rng.permutation(avail[c])[: take[c]]]
        val_parts.append(chosen[: val_share[c]])
        train_parts.append(chosen[val_share[c] :])
    train = np.sort(np.concatenate(train_parts)) if train_parts else np.empty(0, np.int64)
    val = np.sort(np.concatenate(val_parts)) if val_parts else np.empty(0, np.int64)
    return BudgetSample(train_indices=train, val_indices=val, budget=budget)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

def generate_synthetic(cfg: SyntheticConfig) -> LabeledDataset:
    """Generate a labeled corpus with separated class means, isotropic noise,
    and one shared confounder direction. Pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    meta: dict = {"synthetic": True}

    draws = rng.normal(size=(cfg.C, cfg.d))
    if cfg.d >= cfg.C:
        q, _ = np.linalg.qr(draws.T)
        means = cfg.separation * q.T[: cfg.C]
    else:
        means = cfg.separation * draws / np.linalg.norm(draws, axis=1, keepdims=True)
        meta["mean_orthonormalization"] = "skipped: d < C"

    u = rng.normal(size=cfg.d)
    u /= np.linalg.norm(u)

    n = cfg.C * cfg.n_per_class
    labels = np.repeat(np.arange(cfg.C, dtype=np.int32), cfg.n_per_class)
    noise = cfg.noise_sigma * rng.normal(size=(n, cfg.d))
    s = rng.normal(size=n)
    values = means[labels] + noise + cfg.confounder_gamma * np.outer(s, u)

    return LabeledDataset(
        embeddings=EmbeddingMatrix(values.astype(np.float32)),
        labels=labels,
        C=cfg.C,
        label_names=tuple(range(cfg.C)),
        meta=meta,
    )
