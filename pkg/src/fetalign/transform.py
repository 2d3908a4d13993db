"""Homogeneous 2D affine transforms and image/point warping.

Conventions: image coordinates have x along columns and y along rows
(y grows downward); a transform maps source coordinates to destination
coordinates; image warping is pull-back (each output pixel samples the
source through the inverse map) with bilinear interpolation and zero fill
outside the source domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import MissingStructure, SingularTransform
from .geometry import EllipseParams, as_points

_DET_EPS = 1e-12


@dataclass(frozen=True)
class Affine2D:
    """3x3 homogeneous planar affine; last row is exactly (0, 0, 1)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        if not np.array_equal(m[2], [0.0, 0.0, 1.0]):
            raise ValueError("last row must be exactly (0, 0, 1)")
        if abs(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) <= _DET_EPS:
            raise SingularTransform("linear block is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Affine2D":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Affine2D":
        return cls([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])

    @classmethod
    def rotation(cls, angle: float) -> "Affine2D":
        c, s = math.cos(angle), math.sin(angle)
        return cls([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Affine2D":
        sy = sx if sy is None else sy
        return cls([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])

    def apply(self, pts) -> np.ndarray:
        return warp_points(self, pts)


def compose(f: Affine2D, g: Affine2D) -> Affine2D:
    """Composition (f o g): applies g first, then f."""
    return Affine2D(f.m @ g.m)


def invert(f: Affine2D) -> Affine2D:
    """Exact homogeneous inverse."""
    a, b, tx = f.m[0]
    c, d, ty = f.m[1]
    det = a * d - b * c
    if abs(det) <= _DET_EPS:
        raise SingularTransform("transform is singular")
    inv = np.array([
        [d / det, -b / det, (b * ty - d * tx) / det],
        [-c / det, a / det, (c * tx - a * ty) / det],
        [0.0, 0.0, 1.0],
    ])
    return Affine2D(inv)


def warp_points(f: Affine2D, pts) -> np.ndarray:
    """Map an (N, 2) point array through the transform, preserving order."""
    pts = as_points(pts)
    if len(pts) == 0:
        return pts
    return pts @ f.m[:2, :2].T + f.m[:2, 2]


def warp_landmarks(f: Affine2D, landmarks: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Apply the transform to every structure of a landmark set."""
    return {name: warp_points(f, pts) for name, pts in landmarks.items()}


def ellipse_to_canonical(p: EllipseParams, w: int, h: int) -> Affine2D:
    """Affine that centres and axis-aligns an ellipse in a w x h frame.

    The ellipse centre maps to (w/2, h/2), the major-axis endpoints to
    (0, h/2) and (w, h/2), and the minor-axis endpoints to (w/2, 0) and
    (w/2, h): the skull becomes the frame-inscribed axis-aligned ellipse.
    """
    if w < 2 or h < 2:
        raise ValueError("output frame must be at least 2x2 pixels")
    s, c = math.sin(p.theta), math.cos(p.theta)
    sx, sy = w / (2.0 * p.a), h / (2.0 * p.b)
    rot_scale = np.array([
        [sx * c, sx * s, w / 2.0],
        [-sy * s, sy * c, h / 2.0],
        [0.0, 0.0, 1.0],
    ])
    center = np.array([
        [1.0, 0.0, -p.x0],
        [0.0, 1.0, -p.y0],
        [0.0, 0.0, 1.0],
    ])
    return Affine2D(rot_scale @ center)


def as_image(img) -> np.ndarray:
    """Coerce to a 2D float image array."""
    arr = np.asarray(img, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D single-channel image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image intensities must be finite")
    return arr


def warp_image(img, f: Affine2D, out_w: int, out_h: int) -> np.ndarray:
    """Pull-back warp into an (out_h, out_w) frame with bilinear sampling.

    Output pixel (u, v) takes the interpolated source value at
    ``invert(f) @ (u, v)``; samples outside the source domain are 0.
    """
    img = as_image(img)
    inv = invert(f).m
    h_src, w_src = img.shape
    u, v = np.meshgrid(np.arange(out_w, dtype=float),
                       np.arange(out_h, dtype=float))
    sx = inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]
    sy = inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]
    valid = (sx >= 0.0) & (sx <= w_src - 1.0) & (sy >= 0.0) & (sy <= h_src - 1.0)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    wx = sx - x0
    wy = sy - y0
    x0i = np.clip(x0.astype(np.intp), 0, w_src - 1)
    y0i = np.clip(y0.astype(np.intp), 0, h_src - 1)
    x1i = np.clip(x0i + 1, 0, w_src - 1)
    y1i = np.clip(y0i + 1, 0, h_src - 1)
    top = img[y0i, x0i] * (1.0 - wx) + img[y0i, x1i] * wx
    bot = img[y1i, x0i] * (1.0 - wx) + img[y1i, x1i] * wx
    out = top * (1.0 - wy) + bot * wy
    out[~valid] = 0.0
    return out


def mirror_to_convention(img, landmarks: Mapping[str, np.ndarray]):
    """Flip image and landmarks horizontally unless anterior is already left.

    Orientation is detected from the cavum (anterior) vs cerebellum
    (posterior) centroid x positions; the operation is idempotent and
    preserves all inter-landmark distances.

    Returns ``(image, landmarks, mirrored)``.
    """
    img = as_image(img)
    for name in ("cavum", "cerebellum"):
        if name not in landmarks or len(landmarks[name]) == 0:
            raise MissingStructure(f"orientation detection needs '{name}' landmarks")
    cavum_x = float(np.mean(np.asarray(landmarks["cavum"], dtype=float)[:, 0]))
    cereb_x = float(np.mean(np.asarray(landmarks["cerebellum"], dtype=float)[:, 0]))
    if cavum_x <= cereb_x:
        return img, dict(landmarks), False
    w = img.shape[1]
    flipped = {}
    for name, pts in landmarks.items():
        pts = as_points(pts).copy()
        pts[:, 0] = (w - 1) - pts[:, 0]
        flipped[name] = pts
    return np.fliplr(img).copy(), flipped, True
