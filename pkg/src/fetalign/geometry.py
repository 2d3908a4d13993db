"""Ellipse algebra and robust least-squares ellipse fitting.

Two equivalent ellipse representations are used throughout:

* geometric parameters ``(a, b, x0, y0, theta)`` — semi-axes, centre and
  rotation of the major axis from the +x axis (image coordinates, y down);
* general-conic coefficients ``(A..F)`` of
  ``A X^2 + B XY + C Y^2 + D X + E Y + F`` with negative values inside.

The conic built by :func:`params_to_coeffs` expands the canonical equation
exactly, so ``f(X, Y) / (a^2 b^2)`` equals the dimensionless canonical
residual ``x_c^2/a^2 + y_c^2/b^2 - 1``.  All fitting happens on that
normalized residual: the raw sum of squared conic values has a spurious
global minimum at ``a = b -> 0`` which the normalization removes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceWarning, DegenerateInput

_CIRCLE_REL_TOL = 1e-6  # a ~ b below this relative gap: theta fixed to 0

# Residuals at or below this squared magnitude are numerical dust from an
# essentially exact fit; trimming must never discard such points.
_TRIM_FLOOR = 1e-24


def _wrap_half_pi(theta: float) -> float:
    """Wrap an axis angle into [-pi/2, pi/2)."""
    return (theta + math.pi / 2.0) % math.pi - math.pi / 2.0


@dataclass(frozen=True)
class EllipseParams:
    """Geometric ellipse parameters, canonicalized on construction.

    After construction ``a >= b > 0`` and ``theta`` lies in [-pi/2, pi/2).
    Near-circular ellipses (relative axis gap below 1e-6) report theta = 0.
    """

    a: float
    b: float
    x0: float
    y0: float
    theta: float

    def __post_init__(self):
        a, b, theta = float(self.a), float(self.b), float(self.theta)
        if not (a > 0.0 and b > 0.0):
            raise ValueError(f"semi-axes must be positive, got a={a}, b={b}")
        if not all(math.isfinite(v) for v in (a, b, self.x0, self.y0, theta)):
            raise ValueError("ellipse parameters must be finite")
        if a < b:
            a, b = b, a
            theta += math.pi / 2.0
        theta = 0.0 if (a - b) <= _CIRCLE_REL_TOL * a else _wrap_half_pi(theta)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "x0", float(self.x0))
        object.__setattr__(self, "y0", float(self.y0))
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class EllipseCoeffs:
    """General-conic coefficients; must satisfy B^2 - 4AC < 0."""

    A: float
    B: float
    C: float
    D: float
    E: float
    F: float

    def __post_init__(self):
        if not self.B * self.B - 4.0 * self.A * self.C < 0.0:
            raise ValueError("coefficients do not describe an ellipse (B^2 - 4AC >= 0)")


@dataclass
class RobustFitReport:
    """Outcome of the trimmed iterative fit."""

    params: EllipseParams
    inlier_mask: np.ndarray
    per_round_error: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = True


def as_points(pts) -> np.ndarray:
    """Coerce to an (N, 2) float array of finite coordinates."""
    arr = np.asarray(pts, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    return arr


def params_to_coeffs(p: EllipseParams) -> EllipseCoeffs:
    """Expand geometric parameters into general-conic coefficients."""
    s, c = math.sin(p.theta), math.cos(p.theta)
    a2, b2 = p.a * p.a, p.b * p.b
    A = a2 * s * s + b2 * c * c
    B = 2.0 * (b2 - a2) * s * c
    C = a2 * c * c + b2 * s * s
    D = -2.0 * A * p.x0 - B * p.y0
    E = -B * p.x0 - 2.0 * C * p.y0
    F = A * p.x0 * p.x0 + B * p.x0 * p.y0 + C * p.y0 * p.y0 - a2 * b2
    return EllipseCoeffs(A, B, C, D, E, F)


def coeffs_to_params(c: EllipseCoeffs) -> EllipseParams:
    """Recover geometric parameters from conic coefficients.

    The conic is only defined up to a scalar; the sign is normalized so the
    interior is negative before extracting centre, axes and orientation.
    """
    A, B, C, D, E, F = c.A, c.B, c.C, c.D, c.E, c.F
    den = B * B - 4.0 * A * C  # < 0 by the type invariant
    x0 = (2.0 * C * D - B * E) / den
    y0 = (2.0 * A * E - B * D) / den
    f0 = A * x0 * x0 + B * x0 * y0 + C * y0 * y0 + D * x0 + E * y0 + F
    if f0 > 0.0:  # flipped overall sign: make the interior negative
        A, B, C, f0 = -A, -B, -C, -f0
    if f0 >= 0.0:
        raise ValueError("degenerate conic: zero area")
    quad = np.array([[A, B / 2.0], [B / 2.0, C]])
    evals, evecs = np.linalg.eigh(quad)
    if evals[0] <= 0.0:
        raise ValueError("coefficients do not describe a real ellipse")
    # Smaller quadratic eigenvalue corresponds to the major axis.
    a = math.sqrt(-f0 / evals[0])
    b = math.sqrt(-f0 / evals[1])
    theta = math.atan2(evecs[1, 0], evecs[0, 0])
    return EllipseParams(a, b, x0, y0, theta)


def eval_conic(c: EllipseCoeffs, x, y):
    """Evaluate the conic; negative inside, zero on the boundary, positive outside."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    val = (c.A * x * x + c.B * x * y + c.C * y * y + c.D * x + c.E * y + c.F)
    return float(val) if val.ndim == 0 else val


def to_canonical(p: EllipseParams, x, y):
    """Map image coordinates into the ellipse-centred canonical frame.

    Boundary points satisfy ``x_c^2/a^2 + y_c^2/b^2 = 1`` after the map
    (translation by the centre, then rotation by -theta).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s, c = math.sin(p.theta), math.cos(p.theta)
    dx, dy = x - p.x0, y - p.y0
    xc = dx * c + dy * s
    yc = -dx * s + dy * c
    if xc.ndim == 0:
        return float(xc), float(yc)
    return xc, yc


def sample_boundary(p: EllipseParams, n: int) -> np.ndarray:
    """Sample ``n`` boundary points at uniformly spaced parametric angles."""
    if n < 1:
        raise ValueError("need at least one sample")
    t = 2.0 * math.pi * np.arange(n) / n
    s, c = math.sin(p.theta), math.cos(p.theta)
    ct, st = np.cos(t), np.sin(t)
    x = p.x0 + p.a * ct * c - p.b * st * s
    y = p.y0 + p.a * ct * s + p.b * st * c
    return np.column_stack([x, y])


def moment_init(pts) -> EllipseParams:
    """Initial ellipse estimate from point-cloud first and second moments.

    Centre is the mean, orientation the principal covariance eigenvector and
    the semi-axes twice the square roots of the eigenvalues.  Good enough to
    start the iterative fit on masks and boundary samples alike.
    """
    pts = as_points(pts)
    _check_support(pts)
    mean = pts.mean(axis=0)
    cov = np.cov((pts - mean).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    a = 2.0 * math.sqrt(max(evals[1], 0.0))
    b = 2.0 * math.sqrt(max(evals[0], 0.0))
    theta = math.atan2(evecs[1, 1], evecs[0, 1])
    return EllipseParams(a, max(b, 1e-9 * a), mean[0], mean[1], theta)


def _check_support(pts: np.ndarray):
    """Raise DegenerateInput when below minimum support or rank-deficient."""
    if len(pts) < 5:
        raise DegenerateInput(f"need at least 5 points for an ellipse fit, got {len(pts)}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateInput("points are collinear")


def _residuals_uv(v: np.ndarray, x: np.ndarray, y: np.ndarray):
    a, b, x0, y0, th = v
    s, c = math.sin(th), math.cos(th)
    dx, dy = x - x0, y - y0
    u = dx * c + dy * s
    w = -dx * s + dy * c
    r = u * u / (a * a) + w * w / (b * b) - 1.0
    return r, u, w


def _jacobian(v: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    a, b = v[0], v[1]
    s, c = math.sin(v[4]), math.cos(v[4])
    ia2, ib2 = 1.0 / (a * a), 1.0 / (b * b)
    J = np.empty((len(u), 5))
    J[:, 0] = -2.0 * u * u / (a * a * a)
    J[:, 1] = -2.0 * w * w / (b * b * b)
    J[:, 2] = -2.0 * u * c * ia2 + 2.0 * w * s * ib2
    J[:, 3] = -2.0 * u * s * ia2 - 2.0 * w * c * ib2
    J[:, 4] = 2.0 * u * w * (ia2 - ib2)
    return J


def ellipse_residuals(p: EllipseParams, pts) -> np.ndarray:
    """Normalized residuals ``x_c^2/a^2 + y_c^2/b^2 - 1`` for each point."""
    pts = as_points(pts)
    v = np.array([p.a, p.b, p.x0, p.y0, p.theta])
    r, _, _ = _residuals_uv(v, pts[:, 0], pts[:, 1])
    return r


def _trust_box(pts: np.ndarray, anchor: EllipseParams):
    """Asymmetric trust box around an anchor estimate.

    The normalized residual vanishes for conics vastly larger than the point
    cloud - the mirror image of the raw objective's shrinkage degeneracy -
    so with gross outliers an unconstrained least-squares descent inflates
    into a huge arc through the cloud.  Growth is the degenerate direction:
    axes may shrink freely (down to anchor/3) but grow at most 25%, the
    centre may move at most 0.08 cloud radii and the orientation 0.3 rad.
    """
    centroid = pts.mean(axis=0)
    radius = float(np.linalg.norm(pts - centroid, axis=1).max())
    return (np.array([anchor.a, anchor.b]) / 3.0,
            np.array([anchor.a, anchor.b]) * 1.25,
            np.array([anchor.x0, anchor.y0]) - 0.08 * radius,
            np.array([anchor.x0, anchor.y0]) + 0.08 * radius,
            anchor.theta, 0.3)


def _fit_core(pts: np.ndarray, init: EllipseParams, max_iters: int,
              tol: float, box=None):
    """Damped Gauss-Newton on the 5 parameters within a trust box
    (see _trust_box; defaults to a box around ``init``).
    Returns (vector, obj, converged)."""
    x, y = pts[:, 0], pts[:, 1]
    ax_lo, ax_hi, ctr_lo, ctr_hi, th_init, th_bound = \
        _trust_box(pts, init) if box is None else box
    v = np.array([init.a, init.b, init.x0, init.y0, init.theta])
    r, u, w = _residuals_uv(v, x, y)
    obj = float(r @ r)
    best_v, best_obj = v.copy(), obj
    lam = 1e-3
    converged = False
    zero_floor = len(pts) * 1e-28
    for _ in range(max_iters):
        if obj <= zero_floor:
            converged = True
            break
        J = _jacobian(v, u, w)
        g = J.T @ r
        H = J.T @ J
        diag = np.diag(H).copy()
        diag[diag <= 0.0] = 1.0
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 3.0
                continue
            cand = v + step
            cand[0] = min(max(cand[0], ax_lo[0], 1e-9), ax_hi[0])
            cand[1] = min(max(cand[1], ax_lo[1], 1e-9), ax_hi[1])
            cand[2] = min(max(cand[2], ctr_lo[0]), ctr_hi[0])
            cand[3] = min(max(cand[3], ctr_lo[1]), ctr_hi[1])
            dth = (cand[4] - th_init + math.pi / 2.0) % math.pi - math.pi / 2.0
            cand[4] = th_init + min(max(dth, -th_bound), th_bound)
            r_new, u_new, w_new = _residuals_uv(cand, x, y)
            obj_new = float(r_new @ r_new)
            if obj_new < obj:
                v, r, u, w = cand, r_new, u_new, w_new
                drop = obj - obj_new
                obj = obj_new
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                if obj < best_obj:
                    best_v, best_obj = v.copy(), obj
                if drop <= tol * max(obj, 1e-300):
                    converged = True
                break
            lam *= 3.0
        if not accepted:
            # Damping exhausted: no descent direction left, treat as converged.
            converged = True
            break
        if converged:
            break
    return best_v, best_obj, converged


def fit_ellipse(pts, init: EllipseParams | None = None, *,
                max_iters: int = 200, tol: float = 1e-10) -> EllipseParams:
    """Least-squares ellipse fit minimizing the summed squared normalized residual.

    Parameters
    ----------
    pts : array-like, (N, 2)
        Boundary or mask pixel coordinates, N >= 5 and not collinear.
    init : EllipseParams, optional
        Starting estimate; moments of the point cloud when omitted.

    The objective at return never exceeds the objective at ``init``.  If the
    iteration cap is reached before the relative-decrease criterion fires, a
    ConvergenceWarning is emitted and the best parameters found are returned.
    """
    pts = as_points(pts)
    _check_support(pts)
    if init is None:
        init = moment_init(pts)
    v, _, converged = _fit_core(pts, init, max_iters, tol)
    if not converged:
        warnings.warn("ellipse fit reached the iteration cap; returning best-so-far",
                      ConvergenceWarning, stacklevel=2)
    return EllipseParams(v[0], v[1], v[2], v[3], v[4])


def robust_fit_ellipse(pts, *, rounds: int = 5, max_iters: int = 200,
                       tol: float = 1e-10) -> RobustFitReport:
    """Iteratively trimmed ellipse fit.

    Each round fits the current inliers, computes their squared normalized
    residuals and discards points above mean + 1 std before refitting; five
    rounds in total.  Trimming stops early if it would leave fewer than the
    5 points a fit needs, keeping the previous round's result.
    """
    pts = as_points(pts)
    _check_support(pts)
    mask = np.ones(len(pts), dtype=bool)
    per_round: list[tuple[float, float]] = []
    # One trust box anchored at the initial moment estimate covers every
    # refit: trimming must not let the fit walk away round by round.
    anchor = moment_init(pts)
    box = _trust_box(pts, anchor)
    v, _, all_converged = _fit_core(pts, anchor, max_iters, tol, box=box)
    params = EllipseParams(v[0], v[1], v[2], v[3], v[4])
    for _ in range(rounds):
        r2 = ellipse_residuals(params, pts[mask]) ** 2
        per_round.append((float(r2.mean()), float(r2.std())))
        cutoff = r2.mean() + r2.std()
        keep = (r2 <= cutoff) | (r2 <= _TRIM_FLOOR)
        if keep.sum() < 5:
            break
        mask[mask] = keep
        v, _, converged = _fit_core(pts[mask], params, max_iters, tol, box=box)
        all_converged &= converged
        params = EllipseParams(v[0], v[1], v[2], v[3], v[4])
    if not all_converged:
        warnings.warn("robust ellipse fit hit the iteration cap in some round",
                      ConvergenceWarning, stacklevel=2)
    return RobustFitReport(params=params, inlier_mask=mask,
                           per_round_error=per_round, converged=all_converged)
