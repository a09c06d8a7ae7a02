"""Input checks shared by the estimator front end."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils.validation import check_array


def check_images(X, name: str = "X", multiple_of: int = 1) -> np.ndarray:
    """``(N, 3, H, W)`` float images in [0, 1]; a single ``(3, H, W)`` image is promoted."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, input_name=name)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3, H, W), got {X.shape}")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    h, w = X.shape[-2:]
    if h % multiple_of or w % multiple_of:
        raise ValueError(f"{name} spatial size {h}x{w} must be divisible by {multiple_of}")
    return X


def check_depths(y, images: Optional[np.ndarray] = None, name: str = "y") -> np.ndarray:
    """``(N, 1, H, W)`` depth in meters; ``(N, H, W)`` is promoted. Zero marks invalid pixels."""
    y = check_array(y, allow_nd=True, ensure_2d=False, dtype=np.float64, input_name=name)
    if y.ndim == 3:
        y = y[:, None]
    if y.ndim != 4 or y.shape[1] != 1:
        raise ValueError(f"{name} must have shape (N, 1, H, W) or (N, H, W), got {y.shape}")
    if (y < 0).any():
        raise ValueError(f"{name} holds negative depth")
    if images is not None and (y.shape[0] != images.shape[0] or y.shape[-2:] != images.shape[-2:]):
        raise ValueError(f"{name} shape {y.shape} does not match images {images.shape}")
    return y
