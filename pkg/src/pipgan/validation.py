"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .datamodel import SampleRecord


def check_image_array(X, image_size: int | None = None) -> np.ndarray:
    """Coerce to float32 (N, H, W, 3) in [0, 1]; single images gain a batch axis."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) or (H, W, 3) images, got shape {arr.shape}")
    if arr.shape[1] != arr.shape[2]:
        raise ValueError(f"images must be square, got {arr.shape[1]}x{arr.shape[2]}")
    if image_size is not None and arr.shape[1] != image_size:
        raise ValueError(f"expected {image_size}px images, got {arr.shape[1]}px")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def check_conditions(conditions, num_classes: int, n_samples: int) -> np.ndarray:
    """Coerce class indices or one-hot rows to an (N, K) one-hot float32 matrix."""
    arr = np.asarray(conditions)
    if arr.ndim == 0:
        arr = np.full(n_samples, int(arr))
    if arr.ndim == 1 and arr.dtype.kind in "iu":
        if arr.shape[0] != n_samples:
            raise ValueError(f"got {arr.shape[0]} condition indices for {n_samples} samples")
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"condition indices must lie in [0, {num_classes - 1}]")
        onehot = np.zeros((n_samples, num_classes), dtype=np.float32)
        onehot[np.arange(n_samples), arr] = 1.0
        return onehot
    arr = arr.astype(np.float32)
    if arr.ndim == 1:
        arr = np.tile(arr[None, :], (n_samples, 1))
    if arr.shape != (n_samples, num_classes):
        raise ValueError(
            f"expected condition matrix of shape ({n_samples}, {num_classes}), got {arr.shape}"
        )
    if not np.all((arr == 0) | (arr == 1)) or not np.all(arr.sum(axis=1) <= 1):
        raise ValueError("condition rows must be one-hot (or all-zero)")
    return arr


def check_records(records) -> list[SampleRecord]:
    """Validate a homogeneous, nonempty sample-record collection."""
    records = list(records)
    if not records:
        raise ValueError("record list is empty")
    for r in records:
        if not isinstance(r, SampleRecord):
            raise TypeError(f"expected SampleRecord, got {type(r).__name__}")
    shapes = {r.input_image.shape for r in records}
    if len(shapes) != 1:
        raise ValueError(f"records mix image shapes: {sorted(shapes)}")
    dims = {r.condition.dim for r in records}
    if len(dims) != 1:
        raise ValueError(f"records mix condition dimensions: {sorted(dims)}")
    return records
