"""The four coarse-registration strategies compared in the pipeline.

* ``ellipse`` (E): compose the moving skull's centring transform with the
  inverse of the reference's; purely mask-driven, never reads intensities.
* ``ellipse_affine`` (E+A): intensity refinement started from E.
* ``affine`` (AFF): intensity refinement from the identity.
* ``affine_init`` (AFF+I): intensity refinement started from the
  reference's own centring transform.

Refinement optimizes all six entries of the affine block to minimize the
mean squared error between z-scored images over in-domain pixels, with a
coarse-to-fine pyramid, finite-difference gradients and a backtracking
line search.  Internally the fixed image is the reference warped into its
canonical (centred) frame; reported transforms map the moving pixel frame
into the reference pixel frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateImage
from .geometry import EllipseParams, robust_fit_ellipse
from .segmentation import fallback_skull_mask, mask_to_points
from .transform import (Affine2D, as_image, compose, ellipse_to_canonical,
                        invert, warp_image)

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import SubjectRecord

_FD_STEP = 1e-4       # finite-difference step per affine entry
_MIN_VALID_FRAC = 0.05  # below this in-domain fraction the loss is +inf
_MAX_BACKTRACKS = 20


class RegistrationMethod(str, Enum):
    ELLIPSE = "ellipse"
    ELLIPSE_AFFINE = "ellipse_affine"
    AFFINE = "affine"
    AFFINE_INIT = "affine_init"

    @property
    def needs_refinement(self) -> bool:
        return self is not RegistrationMethod.ELLIPSE


@dataclass(frozen=True)
class RefineConfig:
    """Settings for the intensity refinement."""

    max_iters: int = 100          # per pyramid level
    step_size: float = 2.0        # initial line-search step, in pixels
    pyramid_levels: int = 3       # downsampling by 2x2 box averaging
    convergence_tol: float = 1e-7  # relative loss decrease that stops a level

    def __post_init__(self):
        if self.max_iters < 1 or self.pyramid_levels < 1:
            raise ValueError("max_iters and pyramid_levels must be >= 1")
        if self.step_size <= 0.0 or self.convergence_tol <= 0.0:
            raise ValueError("step_size and convergence_tol must be > 0")


@dataclass
class RegistrationResult:
    transform: Affine2D
    loss_trace: list[float] = field(default_factory=list)
    method: RegistrationMethod = RegistrationMethod.ELLIPSE
    converged: bool = True


def zscore(img) -> np.ndarray:
    """Normalize by mean/std of the non-zero intensities; zeros stay zero."""
    img = as_image(img)
    nz = img != 0.0
    vals = img[nz]
    if vals.size == 0:
        raise DegenerateImage("image has no non-zero pixels")
    sigma = float(vals.std())
    if sigma < 1e-12:
        raise DegenerateImage("non-zero intensities are constant")
    out = np.zeros_like(img)
    out[nz] = (vals - vals.mean()) / sigma
    return out


def _box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    h, w = img.shape
    h2, w2 = (h // factor) * factor, (w // factor) * factor
    return img[:h2, :w2].reshape(h2 // factor, factor,
                                 w2 // factor, factor).mean(axis=(1, 3))


def _level_frame(factor: int) -> np.ndarray:
    """Level -> full-resolution coordinate map for box-averaged pyramids."""
    off = (factor - 1) / 2.0
    return np.array([[factor, 0.0, off], [0.0, factor, off], [0.0, 0.0, 1.0]])


def make_mse_loss(moving: np.ndarray, fixed: np.ndarray):
    """Loss functional: mean squared error of the warped moving image against
    the fixed image over in-domain pixels.  Takes a 3x3 matrix mapping moving
    coordinates into the fixed frame.

    Images are held in float32 with all scratch buffers preallocated (the
    functional is evaluated thousands of times per registration); the final
    accumulation is float64.
    """
    mov = np.ascontiguousarray(moving, dtype=np.float32)
    fix = np.ascontiguousarray(fixed, dtype=np.float32)
    hm, wm = mov.shape
    hf, wf = fix.shape
    v, u = np.mgrid[0:hf, 0:wf]
    u = np.ascontiguousarray(u.ravel(), dtype=np.float32)
    v = np.ascontiguousarray(v.ravel(), dtype=np.float32)
    fixed_flat = fix.ravel()
    mov_flat = mov.ravel()
    n = fixed_flat.size
    min_valid = max(1.0, _MIN_VALID_FRAC * n)
    sx = np.empty(n, np.float32)
    sy = np.empty(n, np.float32)
    t1 = np.empty(n, np.float32)
    wx = np.empty(n, np.float32)
    wy = np.empty(n, np.float32)
    g1 = np.empty(n, np.float32)
    g2 = np.empty(n, np.float32)
    valid = np.empty(n, bool)
    vtmp = np.empty(n, bool)
    x0i = np.empty(n, np.int32)
    y0i = np.empty(n, np.int32)
    base = np.empty(n, np.int32)

    def loss(m: np.ndarray) -> float:
        nonlocal sx, sy, t1, wx, wy, g1, g2, valid, base
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-8:
            return math.inf
        ia, ib = m[1, 1] / det, -m[0, 1] / det
        ic, id_ = -m[1, 0] / det, m[0, 0] / det
        np.multiply(u, np.float32(ia), out=sx)
        np.multiply(v, np.float32(ib), out=t1)
        sx += t1
        sx += np.float32(-(ia * m[0, 2] + ib * m[1, 2]))
        np.multiply(u, np.float32(ic), out=sy)
        np.multiply(v, np.float32(id_), out=t1)
        sy += t1
        sy += np.float32(-(ic * m[0, 2] + id_ * m[1, 2]))
        np.greater_equal(sx, 0.0, out=valid)
        np.less_equal(sx, wm - 1.0, out=vtmp)
        valid &= vtmp
        np.greater_equal(sy, 0.0, out=vtmp)
        valid &= vtmp
        np.less_equal(sy, hm - 1.0, out=vtmp)
        valid &= vtmp
        n_valid = int(np.count_nonzero(valid))
        if n_valid < min_valid:
            return math.inf
        np.clip(sx, 0.0, wm - 1.0, out=sx)
        np.clip(sy, 0.0, hm - 1.0, out=sy)
        np.copyto(x0i, sx, casting="unsafe")  # truncation == floor (>= 0)
        np.copyto(y0i, sy, casting="unsafe")
        np.minimum(x0i, wm - 2, out=x0i)
        np.minimum(y0i, hm - 2, out=y0i)
        np.subtract(sx, x0i, out=wx, casting="unsafe")
        np.subtract(sy, y0i, out=wy, casting="unsafe")
        np.multiply(y0i, wm, out=base)
        base += x0i
        np.take(mov_flat, base, out=g1)
        base += 1
        np.take(mov_flat, base, out=g2)
        g2 -= g1
        g2 *= wx
        g1 += g2  # top row lerp
        base += wm - 1
        np.take(mov_flat, base, out=g2)
        base += 1
        np.take(mov_flat, base, out=t1)
        t1 -= g2
        t1 *= wx
        g2 += t1  # bottom row lerp
        g2 -= g1
        g2 *= wy
        g1 += g2  # bilinear sample
        g1 -= fixed_flat
        g1 *= valid
        return float(np.einsum("i,i->", g1, g1, dtype=np.float64)) / n_valid

    return loss


def mse_loss(moving, fixed, transform: Affine2D) -> float:
    """One-off evaluation of the refinement loss (images already z-scored)."""
    return make_mse_loss(as_image(moving), as_image(fixed))(transform.m)


def _fd_gradient(loss, p: np.ndarray) -> np.ndarray:
    g = np.empty(6)
    for i in range(6):
        q = p.copy()
        q[i] = p[i] + _FD_STEP
        hiv = loss(_p_to_m(q))
        q[i] = p[i] - _FD_STEP
        lov = loss(_p_to_m(q))
        g[i] = (hiv - lov) / (2.0 * _FD_STEP)
    return g


def _p_to_m(p: np.ndarray) -> np.ndarray:
    return np.array([[p[0], p[1], p[2]], [p[3], p[4], p[5]], [0.0, 0.0, 1.0]])


def _refine_level(moving: np.ndarray, fixed: np.ndarray, m0: np.ndarray,
                  cfg: RefineConfig, trace: list[float] | None):
    """Gradient descent with backtracking line search at one pyramid level.

    Linear entries are diagonally preconditioned so a unit step moves edge
    pixels by about one pixel regardless of frame size.  Only strictly
    decreasing steps are accepted; ``trace`` (when given) collects each
    accepted loss.  Returns (matrix, final_loss, converged).
    """
    loss = make_mse_loss(moving, fixed)
    p = np.array([m0[0, 0], m0[0, 1], m0[0, 2], m0[1, 0], m0[1, 1], m0[1, 2]])
    cur = loss(_p_to_m(p))
    if not math.isfinite(cur):
        return _p_to_m(p), cur, False
    c = 2.0 / (fixed.shape[0] + fixed.shape[1])
    precond = np.array([c * c, c * c, 1.0, c * c, c * c, 1.0])
    step = cfg.step_size
    converged = False
    for _ in range(cfg.max_iters):
        g = _fd_gradient(loss, p)
        d = -g * precond
        pix_norm = math.sqrt(float(
            (d[0] / c) ** 2 + (d[1] / c) ** 2 + d[2] ** 2
            + (d[3] / c) ** 2 + (d[4] / c) ** 2 + d[5] ** 2))
        if pix_norm < 1e-14:
            converged = True
            break
        d /= pix_norm
        accepted = False
        t = step
        for _ in range(_MAX_BACKTRACKS):
            cand = p + t * d
            val = loss(_p_to_m(cand))
            if val < cur:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True  # no descent along the gradient: local minimum
            break
        drop = cur - val
        p, cur = cand, val
        if trace is not None:
            trace.append(cur)
        step = min(t * 2.0, 64.0)
        if drop <= cfg.convergence_tol * max(cur, 1e-300):
            converged = True
            break
    return _p_to_m(p), cur, converged


def register_affine(moving, fixed, init: Affine2D,
                    cfg: RefineConfig | None = None) -> RegistrationResult:
    """Intensity-based affine refinement of ``init`` (moving -> fixed frame).

    Both images are z-scored first.  Coarser pyramid levels propose updates
    that are kept only when they improve the full-resolution loss, so the
    accepted-loss trace is non-increasing and the final loss never exceeds
    the loss at ``init``.
    """
    cfg = cfg or RefineConfig()
    zm = zscore(moving)
    zf = zscore(fixed)
    full_loss = make_mse_loss(zm, zf)
    m = np.array(init.m, dtype=float)
    trace = [full_loss(m)]
    cur_full = trace[0]
    for lvl in range(cfg.pyramid_levels - 1, 0, -1):
        factor = 2 ** lvl
        frame = _level_frame(factor)
        frame_inv = np.linalg.inv(frame)
        lm = _box_downsample(zm, factor)
        lf = _box_downsample(zf, factor)
        m_lvl, _, _ = _refine_level(lm, lf, frame_inv @ m @ frame, cfg, None)
        cand = frame @ m_lvl @ frame_inv
        cand_full = full_loss(cand)
        if cand_full < cur_full:
            m, cur_full = cand, cand_full
            trace.append(cand_full)
    m, cur_full, converged = _refine_level(zm, zf, m, cfg, trace)
    if not (cur_full <= trace[0]):
        # Refinement never beat the starting point: keep the init.
        m, converged = np.array(init.m, dtype=float), False
        trace = [trace[0]]
    return RegistrationResult(transform=Affine2D(m), loss_trace=trace,
                              method=RegistrationMethod.AFFINE,
                              converged=converged)


def subject_mask_points(record: "SubjectRecord") -> np.ndarray:
    """Skull mask pixel coordinates, deriving a fallback mask if needed."""
    mask = record.skull_mask
    if mask is None:
        mask = fallback_skull_mask(record.image)
    return mask_to_points(mask)


def subject_ellipse(record: "SubjectRecord") -> EllipseParams:
    """Robustly fitted skull ellipse of a record."""
    return robust_fit_ellipse(subject_mask_points(record)).params


def register_ellipse(moving_mask_pts, ref_params: EllipseParams,
                     w: int, h: int) -> RegistrationResult:
    """Skull-ellipse registration: moving frame -> reference frame."""
    fit = robust_fit_ellipse(moving_mask_pts)
    canon_mov = ellipse_to_canonical(fit.params, w, h)
    canon_ref = ellipse_to_canonical(ref_params, w, h)
    return RegistrationResult(transform=compose(invert(canon_ref), canon_mov),
                              loss_trace=[],
                              method=RegistrationMethod.ELLIPSE,
                              converged=fit.converged)


def run_method(method: RegistrationMethod, subject: "SubjectRecord",
               reference: "SubjectRecord", cfg: RefineConfig | None = None, *,
               reference_params: EllipseParams | None = None,
               subject_params: EllipseParams | None = None) -> RegistrationResult:
    """Register ``subject`` to ``reference`` with the requested strategy.

    ``reference_params`` / ``subject_params`` accept precomputed skull
    ellipses so batch callers can share the robust fits.
    """
    method = RegistrationMethod(method)
    cfg = cfg or RefineConfig()
    w, h = reference.width, reference.height
    if reference_params is None:
        reference_params = subject_ellipse(reference)
    canon_ref = ellipse_to_canonical(reference_params, w, h)

    if method is RegistrationMethod.ELLIPSE:
        if subject_params is not None:
            canon_mov = ellipse_to_canonical(subject_params, w, h)
            return RegistrationResult(
                transform=compose(invert(canon_ref), canon_mov),
                loss_trace=[], method=method, converged=True)
        result = register_ellipse(subject_mask_points(subject),
                                  reference_params, w, h)
        result.method = method
        return result

    if method is RegistrationMethod.ELLIPSE_AFFINE:
        if subject_params is None:
            subject_params = subject_ellipse(subject)
        init_canonical = ellipse_to_canonical(subject_params, w, h)
    elif method is RegistrationMethod.AFFINE:
        init_canonical = Affine2D.identity()
    else:  # AFFINE_INIT: the reference's own centring as the initial guess
        init_canonical = canon_ref

    fixed_canonical = warp_image(reference.image, canon_ref, w, h)
    refined = register_affine(subject.image, fixed_canonical,
                              init_canonical, cfg)
    return RegistrationResult(
        transform=compose(invert(canon_ref), refined.transform),
        loss_trace=refined.loss_trace, method=method,
        converged=refined.converged)
