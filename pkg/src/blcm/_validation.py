"""Input validation helpers used across the package."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionError


def check_bits(x, name="matrix", ndim=2):
    """Return ``x`` as an int8 array of 0/1 entries, or raise ValueError."""
    arr = np.asarray(x)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} entries must be 0 or 1")
    return arr.astype(np.int8)


def check_square(arr, name="matrix"):
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, what="inputs"):
    if a.shape != b.shape:
        raise DimensionError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_binary_data(y, name="y"):
    """Validate an N x J binary response matrix (no missing values)."""
    arr = np.asarray(y)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(np.int8)


def check_probability_vector(p, name="proportions", atol=1e-12):
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"{name} must be a non-empty vector")
    if not np.isfinite(arr).all() or (arr < 0).any():
        raise ValueError(f"{name} must be finite and non-negative")
    if abs(arr.sum() - 1.0) > atol:
        raise ValueError(f"{name} must sum to 1 (got {arr.sum()!r})")
    return arr


def n_latent_from_length(length, name="vector"):
    """Infer K from a length-2^K vector."""
    k = int(length).bit_length() - 1
    if k < 0 or (1 << k) != length:
        raise DimensionError(f"{name} length {length} is not a power of two")
    return k
