"""Skull mask acquisition: file ingestion and a classical fallback extractor.

Masks normally come from an external segmentation step (e.g. CNN output
saved as 8-bit rasters); :func:`fallback_skull_mask` provides a rough
intensity-based substitute so the pipeline stays runnable without one.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateImage, DimensionMismatch, EmptyMask
from .transform import as_image

_MASK_THRESHOLD = 127  # 8-bit convention: values above are foreground


def load_mask(path, expected_w: int, expected_h: int) -> np.ndarray:
    """Load a single-channel raster as a boolean mask, checking dimensions."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "I", "I;16", "1", "P"):
            raise OSError(f"{path}: mask must be single-channel, got mode {im.mode}")
        arr = np.asarray(im.convert("I"))
    h, w = arr.shape
    if (w, h) != (expected_w, expected_h):
        raise DimensionMismatch(
            f"{path}: mask is {w}x{h}, expected {expected_w}x{expected_h}")
    return arr > _MASK_THRESHOLD


def save_mask(mask: np.ndarray, path) -> Path:
    """Write a boolean mask as an 8-bit raster (255 foreground, 0 background)."""
    path = Path(path)
    arr = (np.asarray(mask, dtype=bool) * np.uint8(255))
    Image.fromarray(arr, mode="L").save(path)
    return path


def fallback_skull_mask(img) -> np.ndarray:
    """Rough skull mask from intensities alone.

    Thresholds at mean + 1 std of the non-zero intensities, cleans up with
    morphological closing (3x3, 2 iterations) then opening (3x3, 1
    iteration) and keeps the largest 8-connected component.
    """
    img = as_image(img)
    nz = img[img != 0.0]
    if nz.size == 0:
        raise DegenerateImage("image has no non-zero pixels")
    mu, sigma = float(nz.mean()), float(nz.std())
    if sigma < 1e-12:
        raise DegenerateImage("non-zero intensities are constant")
    mask = img > mu + sigma
    box = np.ones((3, 3), dtype=bool)
    mask = ndimage.binary_closing(mask, structure=box, iterations=2)
    mask = ndimage.binary_opening(mask, structure=box, iterations=1)
    labels, n = ndimage.label(mask, structure=box)
    if n == 0:
        raise EmptyMask("no pixels survive thresholding and cleanup")
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == counts.argmax()


def mask_to_points(mask) -> np.ndarray:
    """All foreground pixel coordinates as (x, y) rows in row-major order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMask("mask has no foreground pixels")
    return np.column_stack([cols, rows]).astype(float)
