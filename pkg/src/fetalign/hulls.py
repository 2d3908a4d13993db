"""Concave hulls (alpha shapes), polygon rasterization and probability maps.

The alpha shape of a point set is built from its Delaunay triangulation by
discarding triangles whose circumradius exceeds ``1/alpha`` and taking the
outer boundary of what remains; ``alpha = 0`` keeps everything and yields
the convex hull.  ``alpha="auto"`` picks the largest alpha that still
leaves a single connected polygon covering every input point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import (AlphaTooLarge, DegenerateInput, DimensionMismatch,
                     EmptyInput, UnsupportedStructure)
from .geometry import as_points


@dataclass(frozen=True)
class Polygon2D:
    """Simple closed polygon; vertices are canonicalized to positive
    (counter-clockwise under y-down coordinates) orientation."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        area = _signed_area(v)
        if abs(area) < 1e-12:
            raise ValueError("polygon has zero area")
        if area < 0.0:
            v = v[::-1].copy()
        if _self_intersects(v):
            raise ValueError("polygon is self-intersecting")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _self_intersects(v: np.ndarray) -> bool:
    """O(n^2) proper-intersection test between non-adjacent edges."""
    n = len(v)
    segs = [(v[i], v[(i + 1) % n]) for i in range(n)]

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            p1, p2 = segs[i]
            q1, q2 = segs[j]
            d1, d2 = cross(p1, p2, q1), cross(p1, p2, q2)
            d3, d4 = cross(q1, q2, p1), cross(q1, q2, p2)
            if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
                return True
    return False


def _circumradii(pts: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    pa, pb, pc = pts[simplices[:, 0]], pts[simplices[:, 1]], pts[simplices[:, 2]]
    la = np.linalg.norm(pb - pc, axis=1)
    lb = np.linalg.norm(pa - pc, axis=1)
    lc = np.linalg.norm(pa - pb, axis=1)
    area2 = np.abs((pb[:, 0] - pa[:, 0]) * (pc[:, 1] - pa[:, 1])
                   - (pc[:, 0] - pa[:, 0]) * (pb[:, 1] - pa[:, 1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = la * lb * lc / (2.0 * area2)
    r[~np.isfinite(r)] = np.inf
    return r


def _boundary_ring(simplices: np.ndarray) -> list[int] | None:
    """Outer vertex ring of a triangle set, or None when it is not a single
    simple ring (holes, pinch points) or the set is edge-disconnected."""
    if len(simplices) == 0:
        return None
    # Edge-connectivity of the kept triangles via union-find.
    parent = list(range(len(simplices)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edge_owner: dict[tuple[int, int], int] = {}
    boundary: dict[tuple[int, int], None] = {}
    for t_idx, tri in enumerate(simplices):
        for k in range(3):
            e = (int(tri[k]), int(tri[(k + 1) % 3]))
            key = (min(e), max(e))
            if key in edge_owner:
                ra, rb = find(edge_owner[key]), find(t_idx)
                parent[ra] = rb
                boundary.pop(key, None)
            else:
                edge_owner[key] = t_idx
                boundary[key] = None
    if len({find(i) for i in range(len(simplices))}) != 1:
        return None
    # Chain boundary edges; every boundary vertex must have degree exactly 2.
    adj: dict[int, list[int]] = {}
    for a, b in boundary:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    if any(len(nbrs) != 2 for nbrs in adj.values()):
        return None
    start = next(iter(adj))
    ring = [start]
    prev, cur = -1, start
    while True:
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        if nxt == start:
            break
        ring.append(nxt)
        prev, cur = cur, nxt
        if len(ring) > len(boundary):
            return None
    if len(ring) != len(boundary):  # leftover edges: there was a hole
        return None
    return ring


def _covers_all(simplices: np.ndarray, n_points: int) -> bool:
    return len(np.unique(simplices)) == n_points


def concave_hull(pts, alpha: float | str = "auto") -> Polygon2D:
    """Alpha-shape boundary polygon of a 2D point set.

    Parameters
    ----------
    pts : array-like, (N, 2) with N >= 3, not all collinear.
    alpha : float or "auto"
        0 gives the convex hull.  A positive value discards Delaunay
        triangles with circumradius > 1/alpha and raises AlphaTooLarge if
        that drops an input point or disconnects the shape.  "auto"
        bisects over the sorted distinct circumradii (32 steps) for the
        largest alpha that keeps a single polygon covering all points.
    """
    pts = as_points(pts)
    if len(pts) < 3:
        raise DegenerateInput("need at least 3 points for a hull")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateInput(f"degenerate point set: {exc}") from None
    simplices = tri.simplices
    radii = _circumradii(pts, simplices)

    def ring_for_cutoff(cutoff: float) -> list[int] | None:
        kept = simplices[radii <= cutoff]
        if len(kept) == 0 or not _covers_all(kept, len(pts)):
            return None
        return _boundary_ring(kept)

    if alpha == "auto":
        distinct = np.unique(radii[np.isfinite(radii)])
        if distinct.size == 0:
            raise DegenerateInput("all triangles are degenerate")
        lo, hi = 0, distinct.size - 1
        ring = ring_for_cutoff(distinct[hi])
        if ring is None:
            raise DegenerateInput("point set admits no simple hull")
        if ring_for_cutoff(distinct[lo]) is not None:
            hi = lo
        else:
            for _ in range(32):
                if hi - lo <= 1:
                    break
                mid = (lo + hi) // 2
                if ring_for_cutoff(distinct[mid]) is not None:
                    hi = mid
                else:
                    lo = mid
        ring = ring_for_cutoff(distinct[hi])
    else:
        alpha = float(alpha)
        if alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        cutoff = np.inf if alpha == 0.0 else 1.0 / alpha
        ring = ring_for_cutoff(cutoff)
        if ring is None:
            raise AlphaTooLarge(
                f"alpha={alpha} drops points or disconnects the shape")
    return Polygon2D(pts[ring])


def rasterize(poly: Polygon2D, w: int, h: int) -> np.ndarray:
    """Even-odd rasterization sampled at pixel centres (i+0.5, j+0.5)."""
    v = poly.vertices
    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    mask = np.zeros((h, w), dtype=bool)
    centers_x = np.arange(w, dtype=float) + 0.5
    lo = np.minimum(y1, y2)
    hi = np.maximum(y1, y2)
    j0 = max(0, int(np.floor(lo.min() - 0.5)))
    j1 = min(h - 1, int(np.ceil(hi.max())))
    for j in range(j0, j1 + 1):
        yc = j + 0.5
        # Half-open rule [min, max): shared vertices count once.
        crossing = (y1 <= yc) != (y2 <= yc)
        if not crossing.any():
            continue
        t = (yc - y1[crossing]) / (y2[crossing] - y1[crossing])
        xs = np.sort(x1[crossing] + t * (x2[crossing] - x1[crossing]))
        # Inside iff an odd number of crossings lie at or left of the centre.
        idx = np.searchsorted(xs, centers_x, side="right")
        mask[j] = (idx % 2) == 1
    return mask


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel occupancy frequency over a cohort of binary masks.

    Counts are stored exactly; ``data`` is counts / n_subjects so every
    value is a multiple of 1/n_subjects by construction.
    """

    counts: np.ndarray
    n_subjects: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2:
            raise ValueError("counts must be a 2D array")
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        if counts.min() < 0 or counts.max() > self.n_subjects:
            raise ValueError("counts out of range for the cohort size")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def data(self) -> np.ndarray:
        return self.counts / float(self.n_subjects)

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]


def average_masks(masks) -> ProbabilityMap:
    """Pixel-wise mean of equally sized binary masks."""
    masks = list(masks)
    if not masks:
        raise EmptyInput("need at least one mask to average")
    first = np.asarray(masks[0], dtype=bool)
    counts = np.zeros(first.shape, dtype=np.int64)
    for m in masks:
        m = np.asarray(m, dtype=bool)
        if m.shape != first.shape:
            raise DimensionMismatch(
                f"mask shape {m.shape} differs from {first.shape}")
        counts += m
    return ProbabilityMap(counts=counts, n_subjects=len(masks))


def build_structure_map(cohort, structure: str, w: int, h: int,
                        alpha: float | str = "auto"):
    """Probability map of one structure over registered landmark sets.

    Each subject's landmark list is turned into a concave hull and
    rasterized; the rasters are averaged.  Subjects whose hull computation
    fails are skipped and reported.

    Returns ``(ProbabilityMap, skipped)`` where ``skipped`` is a list of
    (subject index, reason) pairs.
    """
    from .dataset import STRUCTURE_SCHEMA  # local import avoids a cycle

    if structure not in STRUCTURE_SCHEMA:
        raise UnsupportedStructure(f"unknown structure '{structure}'")
    if STRUCTURE_SCHEMA[structure] <= 2:
        raise UnsupportedStructure(
            f"'{structure}' has only {STRUCTURE_SCHEMA[structure]} landmarks; "
            "maps need more than 2")
    cohort = list(cohort)
    if not cohort:
        raise EmptyInput("empty cohort")
    rasters = []
    skipped: list[tuple[int, str]] = []
    for idx, landmarks in enumerate(cohort):
        pts = landmarks.get(structure)
        if pts is None:
            skipped.append((idx, "structure missing"))
            continue
        try:
            hull = concave_hull(pts, alpha)
        except (DegenerateInput, AlphaTooLarge) as exc:
            skipped.append((idx, str(exc)))
            continue
        rasters.append(rasterize(hull, w, h))
    if not rasters:
        raise EmptyInput(f"no subject produced a hull for '{structure}'")
    return average_masks(rasters), skipped
