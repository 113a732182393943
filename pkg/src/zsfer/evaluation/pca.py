from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData, RankDeficient


@dataclass
class PCAResult:
    points: np.ndarray        # (n, k) projections
    components: np.ndarray    # (k, D) orthonormal rows
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def _power_iteration(a: np.ndarray, rng, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    v = rng.normal(size=a.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = a @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w /= norm
        lam_new = float(w @ a @ w)
        converged = abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300) and \
            min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < np.sqrt(tol)
        v, lam = w, lam_new
        if converged:
            break
    return v, lam


def pca_project(embeddings, dims: int = 3, seed: int = 0, tol: float = 1e-14,
                max_iter: int = 20000) -> PCAResult:
    """Mean-centred PCA by power iteration on the covariance with deflation.

    If fewer than ``dims`` components carry variance, the available ones are
    returned and a :class:`RankDeficient` warning is issued.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or dims < 1 or x.shape[0] < dims + 1:
        raise InsufficientData(f"need at least dims+1={dims + 1} points of one dimension")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    comps, lams = [], []
    a = cov.copy()
    for _ in range(min(dims, x.shape[1])):
        v, lam = _power_iteration(a, rng, tol, max_iter)
        if total <= 0 or lam <= 1e-12 * total:
            break
        # re-orthogonalize against earlier components to keep rounding from leaking back in
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        lam = float(v @ cov @ v)
        comps.append(v)
        lams.append(lam)
        a = a - lam * np.outer(v, v)
    if len(comps) < dims:
        warnings.warn(f"only {len(comps)} of {dims} components carry variance", RankDeficient,
                      stacklevel=2)
    components = np.array(comps).reshape(len(comps), x.shape[1])
    ratios = np.array(lams) / total if total > 0 else np.zeros(len(comps))
    return PCAResult(xc @ components.T, components, ratios, mean)


def write_projection_csv(path, ids, classes, points) -> None:
    points = np.asarray(points)
    axes = ["x", "y", "z"][: points.shape[1]] if points.shape[1] <= 3 else \
        [f"pc{i + 1}" for i in range(points.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "class", *axes])
        for i, c, p in zip(ids, classes, points):
            w.writerow([i, "" if c is None else c, *(f"{v:.10g}" for v in p)])
