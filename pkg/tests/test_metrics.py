import itertools
import math

import numpy as np
import pytest

from fetalign.errors import (DimensionMismatch, EmptyInput, TooFewSamples,
                             TooSmallImage)
from fetalign.metrics import (avg_min_euclidean, hausdorff, polygon_dsc,
                              significance_stars, ssim, wilcoxon_signed_rank)
from fetalign.phantom import PhantomSpec, generate_phantom


def brute_hausdorff(p, q):
    """Independent double-loop oracle (same sqrt formulation, no hypot)."""
    def directed(a, b):
        worst = 0.0
        for x1, y1 in a:
            best = math.inf
            for x2, y2 in b:
                dx, dy = x1 - x2, y1 - y2
                best = min(best, math.sqrt(dx * dx + dy * dy))
            worst = max(worst, best)
        return worst
    return max(directed(p, q), directed(q, p))


def brute_avg_min(p, q):
    def directed(a, b):
        total = 0.0
        for x1, y1 in a:
            best = math.inf
            for x2, y2 in b:
                dx, dy = x1 - x2, y1 - y2
                best = min(best, math.sqrt(dx * dx + dy * dy))
            total += best
        return total / len(a)
    return 0.5 * (directed(p, q) + directed(q, p))


def brute_wilcoxon(x, y):
    """Full 2^n enumeration of the signed-rank null distribution."""
    diff = np.asarray(x, float) - np.asarray(y, float)
    diff = diff[diff != 0.0]
    n = len(diff)
    absd = np.abs(diff)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    sorted_abs = absd[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    w_obs = ranks[diff > 0].sum()
    ws = []
    for signs in itertools.product((0, 1), repeat=n):
        ws.append(sum(r for r, s in zip(ranks, signs) if s))
    ws = np.array(ws)
    eps = 1e-9
    p_le = np.mean(ws <= w_obs + eps)
    p_ge = np.mean(ws >= w_obs - eps)
    return min(1.0, 2.0 * min(p_le, p_ge))


class TestPointMetrics:
    def test_identical_sets_zero(self):
        pts = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert hausdorff(pts, pts) == 0.0
        assert avg_min_euclidean(pts, pts) == 0.0

    def test_hand_computed_example(self):
        p = [(0.0, 0.0), (1.0, 0.0)]
        q = [(0.0, 0.0), (3.0, 0.0)]
        assert hausdorff(p, q) == 2.0
        assert avg_min_euclidean(p, q) == 0.75

    def test_directed_variant(self):
        p = [(0.0, 0.0), (1.0, 0.0)]
        q = [(0.0, 0.0), (3.0, 0.0)]
        assert avg_min_euclidean(p, q, directed=True) == 0.5
        assert avg_min_euclidean(q, p, directed=True) == 1.0

    def test_matches_brute_force_exactly(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            p = rng.uniform(-50, 50, (rng.integers(1, 12), 2))
            q = rng.uniform(-50, 50, (rng.integers(1, 12), 2))
            assert hausdorff(p, q) == brute_hausdorff(p, q)
            assert avg_min_euclidean(p, q) == pytest.approx(
                brute_avg_min(p, q), abs=1e-12)

    def test_avg_min_bounded_by_hausdorff(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            p = rng.uniform(0, 100, (rng.integers(1, 20), 2))
            q = rng.uniform(0, 100, (rng.integers(1, 20), 2))
            assert avg_min_euclidean(p, q) <= hausdorff(p, q) + 1e-12

    def test_rigid_invariance(self):
        rng = np.random.default_rng(29)
        p = rng.uniform(0, 10, (8, 2))
        q = rng.uniform(0, 10, (6, 2))
        c, s = math.cos(0.6), math.sin(0.6)
        rot = np.array([[c, -s], [s, c]])
        shift = np.array([13.0, -4.0])
        p2, q2 = p @ rot.T + shift, q @ rot.T + shift
        assert hausdorff(p2, q2) == pytest.approx(hausdorff(p, q), abs=1e-9)
        assert avg_min_euclidean(p2, q2) == pytest.approx(
            avg_min_euclidean(p, q), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(31)
        p = rng.uniform(0, 10, (5, 2))
        q = rng.uniform(0, 10, (9, 2))
        assert hausdorff(p, q) == hausdorff(q, p)
        assert avg_min_euclidean(p, q) == avg_min_euclidean(q, p)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            hausdorff([], [(0.0, 0.0)])
        with pytest.raises(EmptyInput):
            avg_min_euclidean([(0.0, 0.0)], [])


def square(x0, y0, side):
    return [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)]


class TestPolygonDsc:
    def test_identical_sets(self):
        pts = square(10, 10, 80)
        assert polygon_dsc(pts, pts, 120, 120) == 1.0

    def test_disjoint_squares(self):
        a = square(0, 0, 100)
        b = square(100, 0, 100)
        assert polygon_dsc(a, b, 220, 120) == 0.0

    def test_half_overlap(self):
        a = square(0, 0, 100)
        b = square(50, 0, 100)
        assert polygon_dsc(a, b, 200, 120) == pytest.approx(0.5, abs=0.02)

    def test_order_invariance(self):
        rng = np.random.default_rng(37)
        pts = rng.uniform(10, 90, (8, 2))
        perm = pts[rng.permutation(8)]
        assert polygon_dsc(pts, perm, 100, 100) == 1.0


class TestSsim:
    def test_self_similarity_is_exact_one(self):
        rng = np.random.default_rng(41)
        img = rng.uniform(0, 255, (32, 48))
        assert ssim(img, img) == 1.0

    def test_constant_images_closed_form(self):
        a = np.full((24, 24), 0.25)
        b = np.full((24, 24), 0.5)
        expected = (2 * 0.25 * 0.5 + 1e-4) / (0.25 ** 2 + 0.5 ** 2 + 1e-4)
        got = ssim(a, b, data_range=1.0)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.8004, abs=1e-3)

    def test_identical_constants(self):
        a = np.full((16, 16), 9.0)
        assert ssim(a, a.copy()) == 1.0

    def test_noise_monotonicity(self):
        from fetalign.geometry import EllipseParams
        spec = PhantomSpec(width=160, height=120, ring_thickness=5,
                           skull=EllipseParams(45, 30, 80, 60, 0.1))
        img, _, _ = generate_phantom(spec)
        span = img.max() - img.min()
        rng = np.random.default_rng(43)
        values = []
        for sigma in (0.05, 0.1, 0.2):
            noisy = img + rng.normal(0, sigma * span, img.shape)
            values.append(ssim(img, noisy, data_range=span))
        assert all(v < 1.0 for v in values)
        assert values[0] > values[1] > values[2]

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(47)
        a = rng.uniform(0, 1, (20, 20))
        b = rng.uniform(0, 1, (20, 20))
        s1, s2 = ssim(a, b), ssim(b, a)
        assert s1 == pytest.approx(s2, abs=1e-12)
        assert -1.0 <= s1 <= 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ssim(np.zeros((20, 20)), np.zeros((20, 21)))

    def test_too_small(self):
        with pytest.raises(TooSmallImage):
            ssim(np.zeros((8, 20)), np.zeros((8, 20)))


class TestWilcoxon:
    def test_all_zero_differences(self):
        x = np.arange(10.0)
        with pytest.raises(TooFewSamples):
            wilcoxon_signed_rank(x, x)

    def test_all_positive_n6(self):
        y = np.zeros(6)
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        assert wilcoxon_signed_rank(x, y) == pytest.approx(2.0 / 64.0)

    def test_symmetry_in_arguments(self):
        rng = np.random.default_rng(53)
        x = rng.normal(0, 1, 12)
        y = rng.normal(0.3, 1, 12)
        assert wilcoxon_signed_rank(x, y) == pytest.approx(
            wilcoxon_signed_rank(y, x), abs=1e-12)

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(59)
        for _ in range(40):
            n = int(rng.integers(5, 11))
            x = rng.normal(0, 1, n)
            y = x + rng.normal(0.4, 1, n)
            assert wilcoxon_signed_rank(x, y) == pytest.approx(
                brute_wilcoxon(x, y), abs=1e-12)

    def test_exact_with_ties(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        y = x - np.array([1.0, 1.0, 2.0, 2.0, -1.0, -2.0, 3.0])
        assert wilcoxon_signed_rank(x, y) == pytest.approx(
            brute_wilcoxon(x, y), abs=1e-12)

    def test_normal_approximation_close_to_exact(self):
        # n = 26 goes through the approximation; the DP oracle still works.
        rng = np.random.default_rng(61)
        x = rng.normal(0, 1, 26)
        y = x + rng.normal(0.5, 1.0, 26)
        from fetalign.metrics import (_exact_two_sided_p,
                                      _signed_rank_statistic)
        diff = x - y
        diff = diff[diff != 0]
        w, ranks, _ = _signed_rank_statistic(diff)
        exact = _exact_two_sided_p(w, ranks)
        approx = wilcoxon_signed_rank(x, y)
        assert approx == pytest.approx(exact, abs=0.02)

    def test_too_few_after_drops(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        y = np.array([1.0, 2.0, 3.0, 4.0, 6.0])
        with pytest.raises(TooFewSamples):
            wilcoxon_signed_rank(x, y)


class TestStars:
    @pytest.mark.parametrize("p,label", [
        (0.3, "ns"), (0.06, "ns"), (0.05, "*"), (0.02, "*"),
        (0.01, "**"), (0.005, "**"), (0.001, "***"), (5e-4, "***"),
        (1e-4, "****"), (1e-6, "****"),
    ])
    def test_bands(self, p, label):
        assert significance_stars(p) == label

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            significance_stars(1.5)
