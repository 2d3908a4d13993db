"""Synthetic ultrasound-like phantoms with exact ground truth.

A phantom is a bright elliptical ring (the skull) around dimmer interior
structures placed from a landmark template expressed in skull-normalized
coordinates (unit circle = skull boundary), plus optional multiplicative
speckle and shadow arcs.  Because the landmark set, the ring mask and any
relative transform are known exactly, every pipeline stage can be checked
against ground truth without real data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SubjectRecord
from .errors import InvalidSpec
from .geometry import (EllipseCoeffs, EllipseParams, coeffs_to_params,
                       params_to_coeffs)
from .hulls import Polygon2D, rasterize
from .transform import Affine2D, invert, warp_landmarks

_MARGIN = 5  # minimum pixels between the skull ring and the frame edge

# Intensity levels (arbitrary units, roughly [0, 1]).  The interior base
# must sit well below the mean+std threshold of the fallback segmenter or
# speckle pushes interior pixels over it.
_BG = 0.06
_INTERIOR = 0.17
_RING = 0.82
_STRUCTURE_LEVELS = {
    "cavum": 0.02,       # fluid-filled: dark
    "thalami": 0.66,
    "cerebellum": 0.74,
    "sylvius": 0.78,
    "midline": 0.55,
}


def _octagon(cx, cy, rx, ry):
    ang = np.pi / 4.0 * np.arange(8)
    return [(cx + rx * math.cos(a), cy + ry * math.sin(a)) for a in ang]


def default_template() -> dict[str, np.ndarray]:
    """Landmark template in skull-normalized coordinates (anterior left,
    inferior down, skull boundary on the unit circle)."""
    y_skull = math.sqrt(1.0 - 0.35 ** 2)
    return {
        "skull": np.array([(-1.0, 0.0), (1.0, 0.0),
                           (-0.35, -y_skull), (-0.35, y_skull)]),
        "thalami": np.array([(-0.04, -0.26), (0.26, 0.0), (-0.04, 0.26)]),
        "cerebellum": np.array(_octagon(0.42, 0.10, 0.34, 0.24)),
        "cavum": np.array([(-0.44, -0.11), (-0.18, -0.11),
                           (-0.18, 0.11), (-0.44, 0.11)]),
        "sylvius": np.array([(-0.30, 0.50), (-0.08, 0.64), (0.10, 0.48)]),
        "midline": np.array([(-0.88, 0.0), (-0.42, 0.0)]),
    }


@dataclass
class PhantomSpec:
    """Geometry and texture of one synthetic scan."""

    width: int = 800
    height: int = 540
    skull: EllipseParams = field(
        default_factory=lambda: EllipseParams(170.0, 115.0, 400.0, 270.0, 0.0))
    ring_thickness: float = 10.0
    structure_offsets: dict[str, np.ndarray] = field(default_factory=default_template)
    speckle_sigma: float = 0.0
    shadow_arcs: tuple = ()   # ((angle_lo, angle_hi), attenuation) pairs
    seed: int = 0

    def __post_init__(self):
        if self.ring_thickness <= 0.0:
            raise InvalidSpec("ring_thickness must be positive")
        if self.speckle_sigma < 0.0:
            raise InvalidSpec("speckle_sigma must be >= 0")
        for (_, atten) in self.shadow_arcs:
            if not 0.0 <= atten <= 1.0:
                raise InvalidSpec("shadow attenuation must lie in [0, 1]")


def unit_to_pixel(skull: EllipseParams) -> Affine2D:
    """Transform from skull-normalized coordinates to pixel coordinates."""
    s, c = math.sin(skull.theta), math.cos(skull.theta)
    return Affine2D([
        [skull.a * c, -skull.b * s, skull.x0],
        [skull.a * s, skull.b * c, skull.y0],
        [0.0, 0.0, 1.0],
    ])


def transform_ellipse(p: EllipseParams, f: Affine2D) -> EllipseParams:
    """Exact image of an ellipse under an affine map (via the conic form)."""
    co = params_to_coeffs(p)
    q = np.array([
        [co.A, co.B / 2.0, co.D / 2.0],
        [co.B / 2.0, co.C, co.E / 2.0],
        [co.D / 2.0, co.E / 2.0, co.F],
    ])
    minv = invert(f).m
    q2 = minv.T @ q @ minv
    return coeffs_to_params(EllipseCoeffs(
        q2[0, 0], 2.0 * q2[0, 1], q2[1, 1],
        2.0 * q2[0, 2], 2.0 * q2[1, 2], q2[2, 2]))


def _check_in_frame(skull: EllipseParams, thickness: float, w: int, h: int):
    s, c = math.sin(skull.theta), math.cos(skull.theta)
    ex = math.sqrt((skull.a * c) ** 2 + (skull.b * s) ** 2) + thickness / 2.0
    ey = math.sqrt((skull.a * s) ** 2 + (skull.b * c) ** 2) + thickness / 2.0
    if (skull.x0 - ex < _MARGIN or skull.x0 + ex > w - 1 - _MARGIN
            or skull.y0 - ey < _MARGIN or skull.y0 + ey > h - 1 - _MARGIN):
        raise InvalidSpec(
            f"skull ellipse (with ring) leaves less than {_MARGIN} px of "
            f"margin inside the {w}x{h} frame")


def _ring_and_interior(skull: EllipseParams, thickness: float, w: int, h: int):
    """Boolean rasters of the skull ring band and the ellipse interior."""
    v, u = np.mgrid[0:h, 0:w]
    s, c = math.sin(skull.theta), math.cos(skull.theta)
    dx, dy = u - skull.x0, v - skull.y0
    xc = dx * c + dy * s
    yc = -dx * s + dy * c
    rho = np.sqrt((xc / skull.a) ** 2 + (yc / skull.b) ** 2)
    # |grad rho| is constant along each level set; (rho-1)/|grad rho| is a
    # first-order distance to the boundary, giving a ring of even thickness.
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = np.sqrt((xc / skull.a ** 2) ** 2 + (yc / skull.b ** 2) ** 2) \
            / np.maximum(rho, 1e-12)
    ring = np.abs(rho - 1.0) <= (thickness / 2.0) * grad
    return ring, rho < 1.0, np.arctan2(yc / skull.b, xc / skull.a)


def _draw_line(img: np.ndarray, p0, p1, level: float):
    n = max(2, int(math.hypot(p1[0] - p0[0], p1[1] - p0[1])) * 2)
    xs = np.rint(np.linspace(p0[0], p1[0], n)).astype(int)
    ys = np.rint(np.linspace(p0[1], p1[1], n)).astype(int)
    keep = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[keep], xs[keep]] = level


def _render(skull: EllipseParams, landmarks: dict[str, np.ndarray],
            thickness: float, w: int, h: int, speckle_sigma: float,
            shadow_arcs, seed: int):
    ring, interior, angle = _ring_and_interior(skull, thickness, w, h)
    img = np.full((h, w), _BG)
    img[interior] = _INTERIOR
    for name, level in _STRUCTURE_LEVELS.items():
        pts = landmarks[name]
        if len(pts) >= 3:
            img[rasterize(Polygon2D(pts), w, h)] = level
        else:
            _draw_line(img, pts[0], pts[1], level)
    img[ring] = _RING
    for (lo, hi), atten in shadow_arcs:
        if lo <= hi:
            in_arc = (angle >= lo) & (angle <= hi)
        else:  # arc wraps through +-pi
            in_arc = (angle >= lo) | (angle <= hi)
        img[ring & in_arc] *= atten
    if speckle_sigma > 0.0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((h, w))
        img = img * np.exp(speckle_sigma * noise - 0.5 * speckle_sigma ** 2)
    return img, ring


def generate_phantom(spec: PhantomSpec):
    """Render a phantom.

    Returns ``(image, landmarks, ring_mask)``; landmarks satisfy the
    structure schema and the mask is the exact geometric ring (identical to
    the rendered ring pixels in the noiseless case).
    """
    _check_in_frame(spec.skull, spec.ring_thickness, spec.width, spec.height)
    landmarks = warp_landmarks(unit_to_pixel(spec.skull), spec.structure_offsets)
    img, ring = _render(spec.skull, landmarks, spec.ring_thickness,
                        spec.width, spec.height, spec.speckle_sigma,
                        spec.shadow_arcs, spec.seed)
    return img, landmarks, ring


def generate_pair(spec: PhantomSpec, rel: Affine2D):
    """A (reference, moving) phantom pair related by a known affine.

    The moving record is re-rendered (not resampled) after applying ``rel``
    to the skull ellipse and all landmarks, so there are no interpolation
    artifacts.  Returns ``(reference, moving, truth)`` where ``truth`` maps
    moving pixel coordinates onto the reference frame (i.e. ``rel``
    inverted).
    """
    ref_img, ref_lm, ref_mask = generate_phantom(spec)
    mov_skull = transform_ellipse(spec.skull, rel)
    _check_in_frame(mov_skull, spec.ring_thickness, spec.width, spec.height)
    mov_lm = warp_landmarks(rel, ref_lm)
    mov_img, mov_mask = _render(mov_skull, mov_lm, spec.ring_thickness,
                                spec.width, spec.height, spec.speckle_sigma,
                                spec.shadow_arcs, spec.seed + 1_000_003)
    reference = SubjectRecord(subject_id=10, scan_index=0, image=ref_img,
                              landmarks=ref_lm, skull_mask=ref_mask)
    moving = SubjectRecord(subject_id=11, scan_index=0, image=mov_img,
                           landmarks=mov_lm, skull_mask=mov_mask)
    return reference, moving, invert(rel)


def _similarity_about(cx: float, cy: float, angle: float, scale: float,
                      tx: float, ty: float) -> Affine2D:
    """Rotation and uniform scale about (cx, cy), then translation."""
    c, s = math.cos(angle), math.sin(angle)
    a = scale * c
    b = scale * s
    return Affine2D([
        [a, -b, cx - a * cx + b * cy + tx],
        [b, a, cy - b * cx - a * cy + ty],
        [0.0, 0.0, 1.0],
    ])


def generate_cohort(n: int, base: PhantomSpec, *, seed: int = 0,
                    max_rotation_deg: float = 15.0,
                    scale_range: tuple[float, float] = (0.9, 1.1),
                    max_shift: tuple[float, float] = (40.0, 20.0),
                    brain_offset_sigma: float = 5.0,
                    structure_jitter_sigma: float = 1.5,
                    identity_id: int | None = None):
    """Cohort of phantoms around a base spec, with anatomical variability.

    One subject (``identity_id``, default 10 when present, else 1) is the
    base phantom itself and serves as the registration reference.  Every
    other subject's skull is the base skull moved by a random similarity
    (bounded rotation/scale/shift), and its interior structures are
    additionally displaced by a per-subject common offset plus per-structure
    jitter (both Gaussian, in pixels, clipped at 2.5 sigma) so interiors are
    not affinely locked to the skull.

    Returns a list of ``(record, truth, skull_params)`` tuples where
    ``truth`` maps the record's pixels onto the identity subject's frame.
    """
    if n < 1:
        raise InvalidSpec("cohort size must be >= 1")
    if identity_id is None:
        identity_id = 10 if n >= 10 else 1
    rot = math.radians(max_rotation_deg)
    base_unit = unit_to_pixel(base.skull)
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, child in enumerate(children):
        subject_id = i + 1
        rng = np.random.default_rng(child)
        if subject_id == identity_id:
            rel = Affine2D.identity()
            template = {k: v.copy() for k, v in base.structure_offsets.items()}
        else:
            angle = rng.uniform(-rot, rot)
            scale = rng.uniform(*scale_range)
            tx = rng.uniform(-max_shift[0], max_shift[0])
            ty = rng.uniform(-max_shift[1], max_shift[1])
            rel = _similarity_about(base.skull.x0, base.skull.y0,
                                    angle, scale, tx, ty)
            clip = 2.5
            common = np.clip(rng.normal(0.0, brain_offset_sigma, 2),
                             -clip * brain_offset_sigma,
                             clip * brain_offset_sigma)
            template = {}
            for name, pts in base.structure_offsets.items():
                pts = pts.copy()
                if name != "skull":
                    jitter = np.clip(
                        rng.normal(0.0, structure_jitter_sigma, 2),
                        -clip * structure_jitter_sigma,
                        clip * structure_jitter_sigma)
                    shift = (common + jitter) / np.array([base.skull.a,
                                                          base.skull.b])
                    pts += shift
                template[name] = pts
        skull = transform_ellipse(base.skull, rel) \
            if subject_id != identity_id else base.skull
        _check_in_frame(skull, base.ring_thickness, base.width, base.height)
        base_frame_lm = warp_landmarks(base_unit, template)
        landmarks = base_frame_lm if subject_id == identity_id \
            else warp_landmarks(rel, base_frame_lm)
        img, ring = _render(skull, landmarks, base.ring_thickness,
                            base.width, base.height, base.speckle_sigma,
                            base.shadow_arcs,
                            int(rng.integers(0, 2 ** 31)))
        record = SubjectRecord(subject_id=subject_id, scan_index=0,
                               image=img, landmarks=landmarks,
                               skull_mask=ring)
        out.append((record, invert(rel), skull))
    return out
