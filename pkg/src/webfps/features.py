"""Feature scaling, PCA, Varimax rotation and gain-ratio importance."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ScalerParams:
    min: np.ndarray
    max: np.ndarray


def fit_scaler(X) -> ScalerParams:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_scaler needs a non-empty n x d matrix")
    return ScalerParams(X.min(axis=0), X.max(axis=0))


def apply_scaler(x, p: ScalerParams) -> np.ndarray:
    """Clip to the training range, then map to [0, 1]; constant columns map to 0.

    Accepts a single vector or a matrix of row vectors.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.min.shape[0]:
        raise ValueError(f"dimension mismatch: got {x.shape[-1]}, scaler has {p.min.shape[0]}")
    span = p.max - p.min
    clipped = np.clip(x, p.min, p.max)
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (clipped - p.min) / safe, 0.0)


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    components: np.ndarray  # k x d, orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    capped: bool = False  # k hit k_max/rank before reaching the variance target

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fit_pca(X_scaled, variance_target: float = 0.95, k_max: int = 49) -> PcaTransform:
    """PCA via eigendecomposition of the sample covariance of centered data.

    ``k`` is the smallest number of leading components whose cumulative
    explained-variance ratio reaches ``variance_target``, capped at
    ``min(k_max, rank)``.  Each component's sign is fixed so that its
    largest-magnitude entry is positive.
    """
    X = np.asarray(X_scaled, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("fit_pca needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = evals.sum()
    if total <= 0:
        warnings.warn("zero-variance dataset: PCA keeps no components", RuntimeWarning, stacklevel=2)
        empty = np.zeros(0)
        return PcaTransform(mean, np.zeros((0, d)), empty, empty, capped=True)
    ratio = evals / total
    rank = int(np.sum(evals > evals[0] * max(n, d) * np.finfo(float).eps))
    cum = np.cumsum(ratio)
    k_needed = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    limit = min(k_max, rank)
    k = min(k_needed, limit)
    capped = k < k_needed
    comps = evecs[:, :k].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return PcaTransform(mean, comps, evals[:k].copy(), ratio[:k].copy(), capped)


def apply_pca(x_scaled, t: PcaTransform) -> np.ndarray:
    x = np.asarray(x_scaled, dtype=float)
    if x.shape[-1] != t.mean.shape[0]:
        raise ValueError(f"dimension mismatch: got {x.shape[-1]}, PCA expects {t.mean.shape[0]}")
    return (x - t.mean) @ t.components.T


def varimax_rotate(loadings, max_iter: int = 100, tol: float = 1e-6, normalize: bool = False,
                   return_rotation: bool = False):
    """Orthogonal Varimax rotation of a d x k loading matrix.

    Uses the SVD iteration: ``R <- U V^T`` where ``U S V^T`` is the SVD of
    ``A^T (L^3 - L diag(sum(L^2)) / d)`` with ``L = A R``.  With
    ``normalize`` the rows are Kaiser-normalized before rotating.
    """
    A = np.asarray(loadings, dtype=float)
    d, k = A.shape
    if k < 1:
        raise ValueError("need at least one column")
    R = np.eye(k)
    if k == 1:
        return (A.copy(), R) if return_rotation else A.copy()
    h = np.sqrt((A**2).sum(axis=1)) if normalize else np.ones(d)
    safe_h = np.where(h > 0, h, 1.0)
    B = A / safe_h[:, None]
    crit = 0.0
    for _ in range(max_iter):
        L = B @ R
        u, s, vt = np.linalg.svd(B.T @ (L**3 - L @ np.diag((L**2).sum(axis=0)) / d))
        R = u @ vt
        new = s.sum()
        if crit and new < crit * (1 + tol):
            break
        crit = new
    rotated = (B @ R) * safe_h[:, None]
    return (rotated, R) if return_rotation else rotated


def varimax_contribution(t: PcaTransform, **kwargs) -> np.ndarray:
    """Each raw feature's average share of the rotated components' variance."""
    if t.k == 0:
        return np.zeros(t.mean.shape[0])
    loadings = t.components.T * np.sqrt(t.explained_variance)
    rotated = varimax_rotate(loadings, **kwargs)
    sq = rotated**2
    col = sq.sum(axis=0)
    share = np.divide(sq, col, out=np.zeros_like(sq), where=col > 0)
    return share.mean(axis=1)


def equal_frequency_bins(x, bins: int) -> np.ndarray:
    """Rank-based equal-frequency bin codes; ties share a bin."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    below = np.searchsorted(np.sort(x), x, side="left")  # count strictly smaller
    return np.minimum(below * bins // n, bins - 1)


def _entropy(codes: np.ndarray) -> float:
    _, counts = np.unique(codes, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def gain_ratio(x_codes: np.ndarray, y_codes: np.ndarray) -> float:
    split = _entropy(x_codes)
    if split == 0:
        return 0.0
    cond = 0.0
    n = len(x_codes)
    for v in np.unique(x_codes):
        mask = x_codes == v
        cond += mask.sum() / n * _entropy(y_codes[mask])
    return max(0.0, (_entropy(y_codes) - cond) / split)


def gain_ratio_importance(X, y, bins: int = 10) -> np.ndarray:
    """Information gain ratio of each (binned) feature about binned FPS."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < bins:
        raise ValueError(f"need at least {bins} samples")
    y_codes = equal_frequency_bins(y, bins)
    return np.array([gain_ratio(equal_frequency_bins(X[:, j], bins), y_codes) for j in range(X.shape[1])])


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: list[str]
    varimax: np.ndarray
    gain_ratio: np.ndarray

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "varimax_contribution", "gain_ratio"])
            for name, v, g in zip(self.feature_names, self.varimax, self.gain_ratio):
                w.writerow([name, f"{v:.10g}", f"{g:.10g}"])


# ---------------------------------------------------------------- transform


@dataclass(frozen=True)
class FeatureTransform:
    """Fitted scaler + PCA, serialized beside every trained model."""

    feature_names: list[str]
    scaler: ScalerParams
    pca: PcaTransform
    manifest_version: str = ""

    @classmethod
    def fit(cls, X, feature_names: Sequence[str], variance_target: float = 0.95, k_max: int = 49,
            manifest_version: str = "") -> "FeatureTransform":
        scaler = fit_scaler(X)
        pca = fit_pca(apply_scaler(X, scaler), variance_target, k_max)
        return cls(list(feature_names), scaler, pca, manifest_version)

    def transform(self, x) -> np.ndarray:
        return apply_pca(apply_scaler(x, self.scaler), self.pca)

    @property
    def k(self) -> int:
        return self.pca.k

    def to_dict(self) -> dict:
        return {
            "manifest_version": self.manifest_version,
            "feature_names": self.feature_names,
            "scaler": {"min": self.scaler.min.tolist(), "max": self.scaler.max.tolist()},
            "pca": {
                "mean": self.pca.mean.tolist(),
                "components": self.pca.components.tolist(),
                "explained_variance": self.pca.explained_variance.tolist(),
                "explained_variance_ratio": self.pca.explained_variance_ratio.tolist(),
                "capped": self.pca.capped,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureTransform":
        p = data["pca"]
        d = len(data["feature_names"])
        return cls(
            list(data["feature_names"]),
            ScalerParams(np.array(data["scaler"]["min"]), np.array(data["scaler"]["max"])),
            PcaTransform(np.array(p["mean"]), np.array(p["components"], dtype=float).reshape(-1, d),
                         np.array(p["explained_variance"]), np.array(p["explained_variance_ratio"]),
                         bool(p["capped"])),
            data.get("manifest_version", ""),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureTransform":
        return cls.from_dict(json.loads(Path(path).read_text()))


def importance_report(X_raw, y, transform: FeatureTransform, bins: int = 10) -> ImportanceReport:
    return ImportanceReport(
        transform.feature_names,
        varimax_contribution(transform.pca),
        gain_ratio_importance(X_raw, y, bins),
    )
