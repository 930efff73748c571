"""Small dense-vector kernel shared by the heads and losses."""
from __future__ import annotations

import numpy as np

from .errors import InvalidDistribution, NormTooSmall

EPS_NORM = 1e-12


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > EPS_NORM:
        raise NormTooSmall(f"vector norm {norm!r} is at or below {EPS_NORM}")
    return v / norm


def normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalization of the last axis; returns (unit rows, norms)."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(~(norms > EPS_NORM)):
        raise NormTooSmall("a row has norm at or below the degeneracy threshold")
    return x / norms, norms


def normalize_backward(unit: np.ndarray, norms: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``x / |x|`` back to ``x``: ``(I - u u^T) g / |x|``."""
    proj = np.sum(unit * grad_unit, axis=-1, keepdims=True)
    return (grad_unit - unit * proj) / norms


def logsumexp(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    zmax = np.max(z, axis=axis, keepdims=True)
    out = zmax + np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def stable_softmax(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def entropy(p, tol: float = 1e-9) -> float:
    """Shannon entropy in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise InvalidDistribution("entropy needs a nonnegative vector summing to 1")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def entropy_rows(p: np.ndarray) -> np.ndarray:
    """Entropy of each row of a matrix of probability vectors (unchecked)."""
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=-1)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # piecewise form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
