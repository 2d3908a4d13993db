import math

import numpy as np
import pytest

from fetalign.dataset import validate_landmarks
from fetalign.errors import InvalidSpec
from fetalign.geometry import EllipseParams, robust_fit_ellipse
from fetalign.phantom import (PhantomSpec, generate_cohort, generate_pair,
                              generate_phantom, transform_ellipse,
                              unit_to_pixel)
from fetalign.segmentation import mask_to_points
from fetalign.transform import Affine2D, compose, invert, warp_points


def angle_diff(t1, t2):
    return abs((t1 - t2 + math.pi / 2) % math.pi - math.pi / 2)


SPEC = PhantomSpec(width=400, height=270,
                   skull=EllipseParams(110, 74, 200, 135, 0.15),
                   ring_thickness=6, speckle_sigma=0.0, seed=1)


class TestGeneratePhantom:
    def test_noiseless_mask_recovery(self):
        img, _, mask = generate_phantom(SPEC)
        p = robust_fit_ellipse(mask_to_points(mask)).params
        assert math.hypot(p.x0 - 200, p.y0 - 135) <= 0.5
        assert abs(p.a - 110) / 110 <= 0.01
        assert abs(p.b - 74) / 74 <= 0.01
        assert angle_diff(p.theta, 0.15) <= math.radians(1)

    def test_seed_changes_noise_only(self):
        a = PhantomSpec(width=400, height=270, speckle_sigma=0.2, seed=1,
                        skull=EllipseParams(110, 74, 200, 135, 0.15))
        b = PhantomSpec(width=400, height=270, speckle_sigma=0.2, seed=2,
                        skull=EllipseParams(110, 74, 200, 135, 0.15))
        img_a, lm_a, mask_a = generate_phantom(a)
        img_b, lm_b, mask_b = generate_phantom(b)
        assert np.array_equal(mask_a, mask_b)
        for name in lm_a:
            assert np.array_equal(lm_a[name], lm_b[name])
        assert not np.array_equal(img_a, img_b)

    def test_deterministic_given_seed(self):
        img_a, _, _ = generate_phantom(PhantomSpec(speckle_sigma=0.1, seed=5))
        img_b, _, _ = generate_phantom(PhantomSpec(speckle_sigma=0.1, seed=5))
        assert np.array_equal(img_a, img_b)

    def test_skull_touching_border_invalid(self):
        spec = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(197, 74, 200, 135, 0.0))
        with pytest.raises(InvalidSpec):
            generate_phantom(spec)

    def test_landmarks_pass_schema(self):
        _, landmarks, _ = generate_phantom(SPEC)
        validate_landmarks(landmarks, SPEC.width, SPEC.height)

    def test_mask_equals_ring_render_noiseless(self):
        img, _, mask = generate_phantom(SPEC)
        ring_level = img[mask]
        assert np.unique(ring_level).size == 1
        assert np.array_equal(img == ring_level[0], mask)

    def test_shadow_attenuates_ring(self):
        shadowed = PhantomSpec(width=400, height=270,
                               skull=EllipseParams(110, 74, 200, 135, 0.15),
                               ring_thickness=6,
                               shadow_arcs=(((0.5, 1.5), 0.3),), seed=1)
        img_s, _, mask = generate_phantom(shadowed)
        img_p, _, _ = generate_phantom(SPEC)
        assert img_s[mask].min() < img_p[mask].min()
        assert (img_s[mask] < 0.5).any()


class TestTransformEllipse:
    def test_similarity_maps_parameters(self):
        rel = compose(Affine2D.translation(10, -5),
                      compose(Affine2D.rotation(0.2), Affine2D.scaling(1.1)))
        p = transform_ellipse(SPEC.skull, rel)
        assert p.a == pytest.approx(1.1 * 110, rel=1e-9)
        assert p.b == pytest.approx(1.1 * 74, rel=1e-9)
        assert angle_diff(p.theta, 0.35) < 1e-9
        expected_center = warp_points(rel, [(200.0, 135.0)])[0]
        assert (p.x0, p.y0) == pytest.approx(tuple(expected_center))

    def test_unit_to_pixel_maps_circle_to_boundary(self):
        t = unit_to_pixel(SPEC.skull)
        pt = warp_points(t, [(1.0, 0.0)])[0]
        expected = (200 + 110 * math.cos(0.15), 135 + 110 * math.sin(0.15))
        assert tuple(pt) == pytest.approx(expected)


class TestGeneratePair:
    def test_identity_rel_shares_landmarks(self):
        ref, mov, truth = generate_pair(SPEC, Affine2D.identity())
        for name in ref.landmarks:
            assert np.array_equal(ref.landmarks[name], mov.landmarks[name])
        assert np.allclose(truth.m, np.eye(3))

    def test_ground_truth_maps_moving_onto_reference(self):
        rel = compose(Affine2D.translation(30, -20),
                      compose(Affine2D.rotation(math.radians(10)),
                              Affine2D.scaling(1.1)))
        ref, mov, truth = generate_pair(SPEC, rel)
        for name in ref.landmarks:
            mapped = warp_points(truth, mov.landmarks[name])
            assert np.allclose(mapped, ref.landmarks[name], atol=1e-9)

    def test_off_frame_rel_invalid(self):
        with pytest.raises(InvalidSpec):
            generate_pair(SPEC, Affine2D.translation(150, 0))

    def test_records_carry_masks_and_distinct_noise(self):
        spec = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(100, 70, 200, 135, 0.0),
                           ring_thickness=6, speckle_sigma=0.1, seed=3)
        ref, mov, _ = generate_pair(spec, Affine2D.identity())
        assert ref.skull_mask is not None and mov.skull_mask is not None
        assert not np.array_equal(ref.image, mov.image)


class TestGenerateCohort:
    def test_identity_subject_is_base(self):
        base = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(110, 74, 200, 135, 0.0),
                           ring_thickness=6, seed=0)
        cohort = generate_cohort(12, base, seed=7)
        by_id = {r.subject_id: (r, t, sk) for r, t, sk in cohort}
        assert sorted(by_id) == list(range(1, 13))
        record, truth, skull = by_id[10]
        assert np.allclose(truth.m, np.eye(3))
        assert skull == base.skull

    def test_truth_maps_skull_landmarks_to_reference(self):
        base = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(105, 70, 200, 135, 0.0),
                           ring_thickness=6, seed=0)
        cohort = generate_cohort(12, base, seed=7)
        by_id = {r.subject_id: (r, t, sk) for r, t, sk in cohort}
        ref_lm = by_id[10][0].landmarks
        for sid in (1, 5, 12):
            record, truth, _ = by_id[sid]
            mapped = warp_points(truth, record.landmarks["skull"])
            assert np.allclose(mapped, ref_lm["skull"], atol=1e-9)

    def test_interior_structures_not_affinely_locked(self):
        base = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(105, 70, 200, 135, 0.0),
                           ring_thickness=6, seed=0)
        cohort = generate_cohort(12, base, seed=7, brain_offset_sigma=6.0)
        by_id = {r.subject_id: (r, t, sk) for r, t, sk in cohort}
        ref_lm = by_id[10][0].landmarks
        record, truth, _ = by_id[3]
        mapped = warp_points(truth, record.landmarks["cerebellum"])
        assert not np.allclose(mapped, ref_lm["cerebellum"], atol=0.5)

    def test_schema_valid_and_deterministic(self):
        base = PhantomSpec(width=400, height=270,
                           skull=EllipseParams(105, 70, 200, 135, 0.0),
                           ring_thickness=6, speckle_sigma=0.1, seed=0)
        a = generate_cohort(6, base, seed=3)
        b = generate_cohort(6, base, seed=3)
        for (ra, _, _), (rb, _, _) in zip(a, b):
            validate_landmarks(ra.landmarks, 400, 270)
            assert np.array_equal(ra.image, rb.image)
