"""Class prototype estimation: per-class means of labeled embeddings.

Prototypes are computed in the standardized space so that every training
objective sees them on the same scale as its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegeneratePrototypeError(ValueError):
    pass


@dataclass(frozen=True)
class PrototypeSet:
    """Raw class means and their unit-norm versions, one row per class."""

    means: np.ndarray  # (C, d) raw per-class means, kept for diagnostics
    unit: np.ndarray  # (C, d) rows normalized to unit Euclidean norm
    support: np.ndarray  # (C,) labeled rows per class

    @property
    def C(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def compute_prototypes(x: np.ndarray, labels: np.ndarray, C: int) -> PrototypeSet:
    """Mean each class's rows and L2-normalize the result.

    Raises if a class has no labeled rows or its mean has near-zero norm.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    means = np.empty((C, x.shape[1]))
    support = np.empty(C, dtype=np.int64)
    for c in range(C):
        rows = x[labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no labeled rows")
        means[c] = rows.mean(axis=0)
        support[c] = rows.shape[0]
    norms = np.linalg.norm(means, axis=1)
    degenerate = norms < 1e-12
    if degenerate.any():
        c = int(np.flatnonzero(degenerate)[0])
        raise DegeneratePrototypeError(f"degenerate prototype for class {c}")
    return PrototypeSet(means=means, unit=means / norms[:, None], support=support)
