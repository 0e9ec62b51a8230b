"""Standardization and the baseline transforms: L2, PCA whitening, LDA.

All functions compute in float64; casting back to storage float32 happens at
file boundaries only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

#: rows whose norm is already within this of 1 are left untouched, which makes
#: row normalization bitwise idempotent (cosine rankings of raw and L2-applied
#: data then coincide exactly, not just approximately)
_UNIT_SKIP_TOL = 1e-12

#: below this norm a vector is treated as zero in similarity computations
ZERO_NORM_TOL = 1e-12


def _normalize_rows(x: np.ndarray, zero_tol: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    out = x.copy()
    out[norms <= zero_tol] = 0.0
    need = (norms > zero_tol) & (np.abs(norms - 1.0) > _UNIT_SKIP_TOL)
    out[need] = x[need] / norms[need, None]
    return out


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each nonzero row to unit Euclidean norm; zero rows stay zero."""
    return _normalize_rows(x, 0.0)


def unit_rows(x: np.ndarray) -> np.ndarray:
    """Row normalization for similarity computations: rows with norm below
    ``ZERO_NORM_TOL`` are zeroed so their cosines come out as 0."""
    return _normalize_rows(x, ZERO_NORM_TOL)


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension z-score transform fitted on a training split."""

    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-12


def standardizer_fit(train: np.ndarray, epsilon: float = 1e-12) -> Standardizer:
    """Fit per-dimension mean and population (1/n) standard deviation."""
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 1:
        raise ValueError("standardizer requires at least one training row")
    mean = train.mean(axis=0)
    std = np.sqrt(np.mean((train - mean) ** 2, axis=0))
    return Standardizer(mean=mean, std=std, epsilon=epsilon)


def standardizer_apply(s: Standardizer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - s.mean) / np.maximum(s.std, s.epsilon)


def standardizer_invert(s: Standardizer, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z * np.maximum(s.std, s.epsilon) + s.mean


@dataclass(frozen=True)
class PcaWhitener:
    """Whitening transform: center, rotate onto principal axes, rescale each
    axis by 1/sqrt(eigenvalue). Directions with eigenvalue at or below
    ``eigen_floor`` are dropped, so the output may have fewer dimensions."""

    mean: np.ndarray
    components: np.ndarray  # (d, m), orthonormal columns
    eigenvalues: np.ndarray  # (m,), descending
    eigen_floor: float = 1e-8

    @property
    def m(self) -> int:
        return self.components.shape[1]


def pca_whiten_fit(train: np.ndarray, eigen_floor: float = 1e-8) -> PcaWhitener:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise ValueError("whitening requires at least two training rows")
    n = train.shape[0]
    mean = train.mean(axis=0)
    centered = train - mean
    cov = centered.T @ centered / n
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    keep = w > eigen_floor
    return PcaWhitener(
        mean=mean,
        components=np.ascontiguousarray(v[:, keep]),
        eigenvalues=w[keep],
        eigen_floor=eigen_floor,
    )


def pca_whiten_apply(w: PcaWhitener, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    scale = 1.0 / np.sqrt(np.maximum(w.eigenvalues, w.eigen_floor))
    return (x - w.mean) @ w.components * scale


@dataclass(frozen=True)
class LdaProjector:
    """Fisher discriminant projection onto C-1 directions."""

    projection: np.ndarray  # (d, C-1)
    shrinkage_lambda: float


def lda_fit(
    x: np.ndarray, labels: np.ndarray, shrinkage_lambda: float = 0.1
) -> LdaProjector:
    """Solve the shrinkage-regularized Fisher problem.

    The within-class scatter is blended with its trace-scaled identity,
    S_w <- (1 - lam) * S_w + lam * trace(S_w)/d * I, which keeps the
    generalized eigenproblem solvable when labeled rows are scarce. If the
    solve fails at the requested lambda, it is retried once at 0.5.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("LDA requires at least two classes")
    d = x.shape[1]

    overall = x.mean(axis=0)
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for c in classes:
        rows = x[labels == c]
        mu = rows.mean(axis=0)
        centered = rows - mu
        s_w += centered.T @ centered
        gap = mu - overall
        s_b += rows.shape[0] * np.outer(gap, gap)

    for lam in (shrinkage_lambda, 0.5):
        shrunk = (1.0 - lam) * s_w + lam * (np.trace(s_w) / d) * np.eye(d)
        try:
            w, v = scipy.linalg.eigh(s_b, shrunk)
        except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
            continue
        proj = v[:, np.argsort(w)[::-1][: classes.size - 1]]
        if np.isfinite(proj).all():
            return LdaProjector(projection=np.ascontiguousarray(proj), shrinkage_lambda=lam)
    raise ValueError("within-class scatter is singular even after shrinkage")


def lda_apply(p: LdaProjector, x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) @ p.projection
