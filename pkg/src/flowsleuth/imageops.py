"""Small shared image operations: grayscale conversion and bilinear resampling.

Everything here is deterministic and pure; the rest of the pipeline leans on
these primitives so that resampling behaves identically in the flow solver,
the input encoders, and the synthetic-corpus generator.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates

# ITU-R 601 luminance weights.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Convert an HxWx3 image to a float64 luminance grid on the input scale.

    8-bit input therefore maps to [0, 255], which is the intensity scale the
    flow solver's default smoothness weight is tuned for.
    """
    if rgb.ndim == 2:
        return np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {rgb.shape}")
    r, g, b = GRAY_WEIGHTS
    out = r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    return out.astype(np.float64)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize using the half-pixel-center coordinate convention.

    Output sample k maps to input coordinate (k + 0.5) / scale - 0.5, clipped
    to the valid range, so downsampling by exactly 2 averages 2x2 blocks.
    Works for 2-D grids and HxWxC images.
    """
    in_h, in_w = img.shape[:2]
    if (out_h, out_w) == (in_h, in_w):
        return np.asarray(img, dtype=np.float64).copy()
    rows = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    cols = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    if img.ndim == 2:
        return map_coordinates(np.asarray(img, dtype=np.float64), [rr, cc], order=1, mode="nearest")
    out = np.empty((out_h, out_w, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        out[:, :, c] = map_coordinates(
            np.asarray(img[:, :, c], dtype=np.float64), [rr, cc], order=1, mode="nearest"
        )
    return out


def warp_bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``img`` at (x + u, y + v) with replicate-edge padding."""
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")
