"""Hot kernels for retrieval metrics, with backend selection at import.

The compiled extension (``pearl._ckern``, built from Cython) is used when it
imported successfully and ``PEARL_NO_EXT`` is unset; otherwise the numpy
implementations below take over. Both backends produce identical neighbor
rankings (same tie rules on identical similarity inputs); the accumulated
separation sums agree to float reassociation error. ``benchmarks/`` compares
their throughput.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from . import _ckern
except ImportError:
    _ckern = None

_FORCED_OFF = os.environ.get("PEARL_NO_EXT", "") not in ("", "0")
HAVE_COMPILED = _ckern is not None


def active_backend() -> str:
    return "compiled" if (HAVE_COMPILED and not _FORCED_OFF) else "numpy"


def _resolve(backend: str | None) -> str:
    if backend is None:
        return active_backend()
    if backend not in ("numpy", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "compiled" and not HAVE_COMPILED:
        raise RuntimeError("compiled kernel extension is not available")
    return backend


def _topk_numpy(sims: np.ndarray, k: int, exclude_self: bool):
    if exclude_self:
        sims = sims.copy()
        np.fill_diagonal(sims, -np.inf)
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k].astype(np.int64)
    vals = np.take_along_axis(sims, order, axis=1)
    return order, vals


def topk_from_similarity(
    sims: np.ndarray, k: int, exclude_self: bool = False, backend: str | None = None
):
    """Select the k largest entries per row: descending value, ties broken by
    ascending column index. Returns (indices, values), each (n_rows, k)."""
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    limit = sims.shape[1] - (1 if exclude_self else 0)
    if not 1 <= k <= limit:
        raise ValueError(f"k={k} out of range for pool of {sims.shape[1]}")
    if exclude_self and sims.shape[0] != sims.shape[1]:
        raise ValueError("exclude_self requires queries and pool to be the same set")
    if _resolve(backend) == "compiled":
        return _ckern.topk_select(sims, k, exclude_self)
    return _topk_numpy(sims, k, exclude_self)


def _separation_numpy(unit_x: np.ndarray, labels: np.ndarray):
    gram = unit_x @ unit_x.T
    same = labels[:, None] == labels[None, :]
    same_total = float((gram * same).sum()) - float(np.trace(gram))
    all_total = float(gram.sum()) - float(np.trace(gram))
    counts = np.bincount(labels)
    n = labels.size
    n_intra = int((counts * (counts - 1)).sum()) // 2
    n_inter = n * (n - 1) // 2 - n_intra
    return same_total / 2.0, n_intra, (all_total - same_total) / 2.0, n_inter


def separation_sums(
    unit_x: np.ndarray, labels: np.ndarray, backend: str | None = None
):
    """Sums and counts of pairwise cosines over unordered pairs, split into
    same-label and different-label pairs. ``unit_x`` rows must already be
    normalized."""
    unit_x = np.ascontiguousarray(unit_x, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    if _resolve(backend) == "compiled":
        return _ckern.separation_sums(unit_x, labels)
    return _separation_numpy(unit_x, labels)
