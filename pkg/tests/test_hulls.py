import numpy as np
import pytest

from fetalign.dataset import STRUCTURE_SCHEMA
from fetalign.errors import (AlphaTooLarge, DegenerateInput,
                             DimensionMismatch, EmptyInput,
                             UnsupportedStructure)
from fetalign.hulls import (Polygon2D, ProbabilityMap, average_masks,
                            build_structure_map, concave_hull, rasterize)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def point_in_or_on(poly: Polygon2D, pt, tol=1e-9) -> bool:
    """Independent even-odd check with an on-boundary tolerance."""
    v = poly.vertices
    n = len(v)
    x, y = pt
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        dx, dy = x2 - x1, y2 - y1
        t = ((x - x1) * dx + (y - y1) * dy) / (dx * dx + dy * dy)
        t = min(max(t, 0.0), 1.0)
        if (x - (x1 + t * dx)) ** 2 + (y - (y1 + t * dy)) ** 2 <= tol:
            return True
    inside = False
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        if (y1 <= y) != (y2 <= y):
            cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if cross > x:
                inside = not inside
    return inside


class TestPolygon2D:
    def test_orientation_canonicalized(self):
        silly = Polygon2D(SQUARE[::-1])
        assert silly.area > 0

    def test_rejects_self_intersection(self):
        bow = [(0, 0), (1, 1), (1, 0), (0, 1)]
        with pytest.raises(ValueError):
            Polygon2D(bow)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            Polygon2D([(0, 0), (1, 1), (2, 2)])


class TestConcaveHull:
    def test_square_convex_hull(self):
        hull = concave_hull(SQUARE, alpha=0)
        assert hull.area == pytest.approx(1.0)
        assert len(hull.vertices) == 4

    def test_interior_point_absorbed(self):
        pts = np.vstack([SQUARE, [[0.5, 0.5]]])
        hull = concave_hull(pts, alpha=0)
        assert hull.area == pytest.approx(1.0)

    def test_collinear_degenerate(self):
        with pytest.raises(DegenerateInput):
            concave_hull([(0, 0), (1, 1), (2, 2)])

    def test_too_few_points(self):
        with pytest.raises(DegenerateInput):
            concave_hull([(0, 0), (1, 0)])

    def test_alpha_too_large(self):
        with pytest.raises(AlphaTooLarge):
            concave_hull(SQUARE, alpha=10.0)

    def test_auto_covers_all_points(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            pts = rng.uniform(0, 100, (15, 2))
            hull = concave_hull(pts, "auto")
            for pt in pts:
                assert point_in_or_on(hull, pt, tol=1e-7)

    def test_convex_covers_all_points(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 50, (25, 2))
        hull = concave_hull(pts, alpha=0)
        for pt in pts:
            assert point_in_or_on(hull, pt, tol=1e-7)

    def test_area_non_increasing_in_alpha(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 100, (30, 2))
        areas = []
        for alpha in [0.0, 0.005, 0.01, 0.02, 0.05]:
            try:
                areas.append(concave_hull(pts, alpha).area)
            except AlphaTooLarge:
                break
        assert all(a2 <= a1 + 1e-9 for a1, a2 in zip(areas, areas[1:]))

    def test_auto_beats_convex_on_concave_cloud(self):
        # A filled L-shaped cloud: the alpha shape should carve the notch.
        xs, ys = np.meshgrid(np.arange(11.0), np.arange(11.0))
        grid = np.column_stack([xs.ravel(), ys.ravel()])
        keep = (grid[:, 0] <= 3) | (grid[:, 1] <= 3)
        pts = grid[keep]
        hull_auto = concave_hull(pts, "auto")
        hull_convex = concave_hull(pts, 0)
        assert hull_auto.area < hull_convex.area
        for pt in pts:
            assert point_in_or_on(hull_auto, pt, tol=1e-7)


class TestRasterize:
    def test_rectangle_pixel_count(self):
        rect = Polygon2D([(10, 10), (20, 10), (20, 20), (10, 20)])
        mask = rasterize(rect, 100, 100)
        assert mask.sum() == 100
        assert mask[10, 10] and mask[19, 19] and not mask[20, 20]

    def test_polygon_outside_frame(self):
        rect = Polygon2D([(200, 200), (210, 200), (210, 210), (200, 210)])
        assert rasterize(rect, 100, 100).sum() == 0

    def test_triangle_area_matches_analytic(self):
        tri = Polygon2D([(0, 0), (100, 0), (0, 100)])
        count = int(rasterize(tri, 100, 100).sum())
        assert abs(count - 5000) <= 0.015 * 5000

    def test_large_polygon_area_within_two_percent(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            pts = rng.uniform(10, 190, (12, 2))
            hull = concave_hull(pts, 0)
            if hull.area < 1000:
                continue
            count = int(rasterize(hull, 200, 200).sum())
            assert abs(count - hull.area) <= 0.02 * hull.area


class TestAverageMasks:
    def test_single_mask_identity(self):
        mask = np.zeros((4, 4), bool)
        mask[1:3, 1:3] = True
        pmap = average_masks([mask])
        assert np.array_equal(pmap.data, mask.astype(float))

    def test_two_disjoint_masks(self):
        a = np.zeros((2, 2), bool)
        b = np.zeros((2, 2), bool)
        a[0, 0] = True
        b[1, 1] = True
        pmap = average_masks([a, b])
        assert set(np.unique(pmap.data)) == {0.0, 0.5}

    def test_identical_masks_idempotent(self):
        mask = np.eye(5, dtype=bool)
        pmap = average_masks([mask] * 7)
        assert np.array_equal(pmap.data, mask.astype(float))

    def test_values_are_multiples(self):
        rng = np.random.default_rng(0)
        masks = [rng.random((6, 6)) > 0.5 for _ in range(9)]
        pmap = average_masks(masks)
        assert np.all(pmap.counts * 1.0 == np.rint(pmap.data * 9))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            average_masks([np.zeros((2, 2), bool), np.zeros((3, 3), bool)])

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            average_masks([])

    def test_counts_validated(self):
        with pytest.raises(ValueError):
            ProbabilityMap(counts=np.array([[5]]), n_subjects=3)


class TestBuildStructureMap:
    def _cerebellum(self, offset=0.0):
        ang = np.pi / 4 * np.arange(8)
        pts = np.column_stack([40 + 20 * np.cos(ang) + offset,
                               40 + 12 * np.sin(ang)])
        return {"cerebellum": pts}

    def test_midline_unsupported(self):
        with pytest.raises(UnsupportedStructure):
            build_structure_map([{"midline": np.zeros((2, 2))}],
                                "midline", 80, 80)

    def test_unknown_structure(self):
        with pytest.raises(UnsupportedStructure):
            build_structure_map([self._cerebellum()], "brainstem", 80, 80)

    def test_single_subject_binary(self):
        lm = self._cerebellum()
        pmap, skipped = build_structure_map([lm], "cerebellum", 80, 80)
        assert not skipped
        assert pmap.n_subjects == 1
        assert set(np.unique(pmap.data)) <= {0.0, 1.0}
        hull = concave_hull(lm["cerebellum"], "auto")
        assert np.array_equal(pmap.data == 1.0, rasterize(hull, 80, 80))

    def test_failed_subjects_skipped_and_reported(self):
        good = self._cerebellum()
        collinear = {"cerebellum": np.column_stack([np.arange(8.0),
                                                    np.arange(8.0)])}
        pmap, skipped = build_structure_map([good, collinear, good],
                                            "cerebellum", 80, 80)
        assert pmap.n_subjects == 2
        assert len(skipped) == 1 and skipped[0][0] == 1

    def test_structure_missing_counts_as_skip(self):
        pmap, skipped = build_structure_map(
            [self._cerebellum(), {"thalami": np.zeros((3, 2))}],
            "cerebellum", 80, 80)
        assert pmap.n_subjects == 1
        assert skipped == [(1, "structure missing")]
