"""Registration quality metrics.

Point-based: symmetric Hausdorff distance and the average of minimum
Euclidean distances.  Area-based: Dice coefficient between rasterized
concave hulls.  Intensity-based: mean local SSIM.  Paired comparisons use
the two-sided Wilcoxon signed-rank test (exact null distribution up to 25
non-zero differences) with the usual significance-star bands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (DimensionMismatch, EmptyInput, EmptyRaster,
                     TooFewSamples, TooSmallImage)
from .geometry import as_points
from .hulls import concave_hull, rasterize
from .transform import as_image

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_EXACT_WILCOXON_MAX_N = 25


@dataclass
class MetricReport:
    """One (method, structure) metric row; DSC and SSIM may be absent."""

    method: str
    structure: str
    hausdorff: float
    avg_min_euclid: float
    polygon_dsc: float | None = None
    ssim: float | None = None


def _pairwise_min(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Min distance from each point of p to the set q."""
    diff = p[:, None, :] - q[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).min(axis=1)


def hausdorff(p, q) -> float:
    """Symmetric Hausdorff distance between two non-empty point sets."""
    p, q = as_points(p), as_points(q)
    if len(p) == 0 or len(q) == 0:
        raise EmptyInput("point sets must be non-empty")
    return float(max(_pairwise_min(p, q).max(), _pairwise_min(q, p).max()))


def avg_min_euclidean(p, q, *, directed: bool = False) -> float:
    """Average of minimum Euclidean distances between two point sets.

    Symmetric by default (mean of the two directed averages); pass
    ``directed=True`` for the p -> q direction only.
    """
    p, q = as_points(p), as_points(q)
    if len(p) == 0 or len(q) == 0:
        raise EmptyInput("point sets must be non-empty")
    fwd = float(_pairwise_min(p, q).mean())
    if directed:
        return fwd
    bwd = float(_pairwise_min(q, p).mean())
    return 0.5 * (fwd + bwd)


def polygon_dsc(p, q, w: int, h: int, alpha: float | str = "auto") -> float:
    """Dice coefficient between the rasterized concave hulls of two sets."""
    mask_p = rasterize(concave_hull(p, alpha), w, h)
    mask_q = rasterize(concave_hull(q, alpha), w, h)
    total = int(mask_p.sum()) + int(mask_q.sum())
    if total == 0:
        raise EmptyRaster("both hull rasters are empty at this resolution")
    inter = int((mask_p & mask_q).sum())
    return 2.0 * inter / total


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    ``data_range`` is the intensity span L used for the stabilizing
    constants; when omitted it is taken as the joint dynamic range of the
    two images.
    """
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise TooSmallImage(f"images must be at least "
                            f"{_SSIM_WINDOW}x{_SSIM_WINDOW}, got {a.shape}")
    if data_range is None:
        data_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
        if data_range == 0.0:  # identical constants
            return 1.0
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)

    def smooth(img):
        return ndimage.correlate(img, win, mode="reflect")

    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _signed_rank_statistic(diff: np.ndarray):
    """(W+, doubled midranks, tie sizes) for the non-zero differences."""
    absd = np.abs(diff)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(len(diff))
    sorted_abs = absd[order]
    i = 0
    tie_sizes = []
    while i < len(diff):
        j = i
        while j + 1 < len(diff) and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank
        tie_sizes.append(j - i + 1)
        i = j + 1
    w_plus = float(ranks[diff > 0].sum())
    return w_plus, ranks, tie_sizes


def _exact_two_sided_p(w_plus: float, ranks: np.ndarray) -> float:
    """Exact p by polynomial expansion over the 2^n sign assignments.

    Ranks are midranks (multiples of 0.5), so everything is doubled to
    stay integral.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[:total + 1 - r].copy()
    counts /= counts.sum()
    w2 = int(round(2.0 * w_plus))
    p_le = counts[:w2 + 1].sum()
    p_ge = counts[w2:].sum()
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def wilcoxon_signed_rank(x, y) -> float:
    """Two-sided Wilcoxon signed-rank p-value for paired samples.

    Zero differences are dropped.  The null distribution is enumerated
    exactly for up to 25 non-zero differences; beyond that, the normal
    approximation with tie correction and 0.5 continuity correction is
    used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("need two equally long 1D sample vectors")
    diff = x - y
    diff = diff[diff != 0.0]
    n = len(diff)
    if n < 5:
        raise TooFewSamples(
            f"only {n} non-zero differences; need at least 5")
    w_plus, ranks, ties = _signed_rank_statistic(diff)
    if n <= _EXACT_WILCOXON_MAX_N:
        return _exact_two_sided_p(w_plus, ranks)
    mean_w = n * (n + 1) / 4.0
    var_w = n * (n + 1) * (2 * n + 1) / 24.0
    var_w -= sum(t ** 3 - t for t in ties) / 48.0
    z = (abs(w_plus - mean_w) - 0.5) / math.sqrt(var_w)
    z = max(z, 0.0)
    return float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def significance_stars(p: float) -> str:
    """Star label for a p-value using the conventional bands."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p-value out of range: {p}")
    if p <= 1e-4:
        return "****"
    if p <= 1e-3:
        return "***"
    if p <= 1e-2:
        return "**"
    if p <= 5e-2:
        return "*"
    return "ns"
