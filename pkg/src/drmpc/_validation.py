"""Small input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def as_matrix(value, name: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a 2-d float array, optionally checking the shape."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got ndim={arr.ndim}")
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def as_vector(value, name: str, size: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if size is not None and arr.size != size:
        raise ValueError(f"{name} must have length {size}, got {arr.size}")
    return arr


def check_symmetric(mat: np.ndarray, name: str, tol: float = 1e-12) -> None:
    if np.max(np.abs(mat - mat.T)) > tol * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} must be symmetric")


def check_psd(mat: np.ndarray, name: str, tol: float = 1e-12) -> None:
    check_symmetric(mat, name, tol=max(tol, 1e-12))
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite (min eig {w.min():.3e})")


def check_pd(mat: np.ndarray, name: str, tol: float = 1e-10) -> None:
    check_symmetric(mat, name)
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if w.min() <= tol:
        raise ValueError(f"{name} must be positive definite (min eig {w.min():.3e})")


def check_in_open_interval(x: float, lo: float, hi: float, name: str) -> float:
    x = float(x)
    if not (lo < x < hi):
        raise ValueError(f"{name} must lie in ({lo}, {hi}), got {x}")
    return x


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
