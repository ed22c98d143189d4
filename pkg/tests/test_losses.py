import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tcdepth.errors import EmptyDomainError, InvalidInputError
from tcdepth.geometry import DepthMap, Intrinsics, Pose, depth_consistency_pair
from tcdepth.losses import (
    LOSS_NAMES,
    LossResult,
    LossWeights,
    PhotometricConfig,
    auto_mask,
    cycle_mask,
    geometric_loss,
    min_mask,
    motion_loss,
    motion_mask,
    photometric_error,
    photometric_loss,
    reference_loss,
    smoothness_loss,
    ssim,
    total_loss,
    triplet_losses,
)
from tcdepth.synth import (
    TrajectorySpec,
    comoving_patch,
    make_trajectory,
    preset_scene,
    render,
    kitti_like_intrinsics,
)

images = arrays(np.float64, st.tuples(st.integers(3, 6), st.integers(3, 6), st.just(3)), elements=st.floats(0, 1))
positive = st.floats(0.1, 100)


def maps(shape=(3, 4)):
    return arrays(np.float64, shape, elements=st.floats(0.1, 100))


class TestConfig:
    def test_defaults(self):
        cfg = PhotometricConfig()
        assert (cfg.alpha, cfg.ssim_window, cfg.c1, cfg.c2) == (0.85, 3, 0.01**2, 0.03**2)
        w = LossWeights()
        assert (w.lambda_s, w.lambda_geo, w.lambda_m) == (1e-3, 0.1, 1.0)

    @pytest.mark.parametrize("kwargs", [dict(alpha=-0.1), dict(alpha=1.5), dict(ssim_window=4), dict(ssim_window=1)])
    def test_photometric_validation(self, kwargs):
        with pytest.raises(InvalidInputError):
            PhotometricConfig(**kwargs)

    @pytest.mark.parametrize("kwargs", [dict(lambda_s=-1), dict(lambda_geo=float("inf")), dict(lambda_m=float("nan"))])
    def test_weight_validation(self, kwargs):
        with pytest.raises(InvalidInputError):
            LossWeights(**kwargs)


class TestSsim:
    def test_identical_is_one(self, rng):
        x = rng.uniform(size=(6, 7, 3))
        assert np.all(ssim(x, x) == 1.0)

    def test_inverted_checkerboard_negative(self):
        x = (np.indices((6, 6)).sum(axis=0) % 2).astype(float)
        s = ssim(x, 1 - x)
        assert np.all(s < 0)
        # interior 3x3 window holding five ones: mean 5/9, variance 20/81, covariance -20/81
        mx, my, var = 5 / 9, 4 / 9, 20 / 81
        c1, c2 = 0.01**2, 0.03**2
        expected = (2 * mx * my + c1) * (-2 * var + c2) / ((mx**2 + my**2 + c1) * (2 * var + c2))
        assert s[2, 2] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(-0.9720649278, rel=1e-9)

    def test_zero_variance_closed_form(self):
        s = ssim(np.full((4, 4), 0.3), np.full((4, 4), 0.4))
        np.testing.assert_allclose(s, 0.2401 / 0.2501, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            ssim(np.ones((3, 3)), np.ones((3, 4)))

    @given(images, images)
    def test_bounded(self, x, y):
        if x.shape != y.shape:
            y = np.resize(y, x.shape)
        s = ssim(x, y)
        assert np.all(s <= 1 + 1e-12) and np.all(s >= -1 - 1e-12)

    def test_windows_are_local(self, rng):
        # a difference in one pixel leaves every window that misses it at exactly one
        x = rng.uniform(size=(6, 40, 3))
        y = x.copy()
        y[3, 5] += 0.3
        s = ssim(x, y)
        far = np.ones((6, 40), dtype=bool)
        far[2:5, 4:7] = False
        assert np.all(s[far] == 1.0) and np.all(s[~far] < 1.0)

    def test_masked_windows_ignore_invalid_pixels(self, rng):
        x = rng.uniform(size=(5, 5, 3))
        y = x.copy()
        y[2, 2] = 0.0
        valid = np.ones((5, 5), dtype=bool)
        valid[2, 2] = False
        s = ssim(x, y, valid=valid)
        # x and y agree on every valid pixel, so each window sees identical statistics
        np.testing.assert_allclose(s, 1.0, atol=1e-12)


class TestPhotometricError:
    def test_identical_is_zero(self, rng):
        x = rng.uniform(size=(5, 5, 3))
        assert np.all(photometric_error(x, x) == 0.0)

    def test_alpha_zero_is_l1(self):
        e = photometric_error(np.full((4, 4, 3), 0.2), np.full((4, 4, 3), 0.5), PhotometricConfig(alpha=0))
        np.testing.assert_allclose(e, 0.3)

    def test_alpha_one_is_ssim_term(self, rng):
        x, y = rng.uniform(size=(5, 5, 3)), rng.uniform(size=(5, 5, 3))
        cfg = PhotometricConfig(alpha=1.0)
        np.testing.assert_allclose(photometric_error(x, y, cfg), (1 - ssim(x, y, cfg)) / 2)

    def test_blend(self, rng):
        x, y = rng.uniform(size=(5, 5, 3)), rng.uniform(size=(5, 5, 3))
        expected = 0.85 * (1 - ssim(x, y)) / 2 + 0.15 * np.abs(x - y).mean(axis=-1)
        np.testing.assert_allclose(photometric_error(x, y), expected, rtol=1e-12)

    @given(images)
    def test_non_negative(self, x):
        y = np.clip(x[::-1] + 0.1, 0, 1)
        assert np.all(photometric_error(x, y) >= -1e-12)


class TestCycleMask:
    def test_perfect_round_trip_falls_back_to_all_true(self, rng):
        x = rng.uniform(size=(4, 5, 3))
        assert cycle_mask(x, x).all()

    def test_hand_computed_percentile(self):
        # alpha = 0 makes the error the plain per-pixel difference
        x = np.zeros((1, 10))
        y = np.arange(1, 11, dtype=float).reshape(1, 10) / 100
        m = cycle_mask(x, y, PhotometricConfig(alpha=0), 0.7)
        assert m.tolist() == [[True] * 6 + [False] * 4]

    def test_outlier_excluded(self):
        x = np.zeros((3, 3))
        y = np.zeros((3, 3))
        y[1, 1] = 1.0
        m = cycle_mask(x, y, PhotometricConfig(alpha=0))
        assert not m[1, 1] and m.sum() == 8

    def test_valid_domain(self):
        x = np.zeros((1, 4))
        y = np.array([[0.1, 0.2, 0.3, 0.9]])
        valid = np.array([[True, True, True, False]])
        m = cycle_mask(x, y, PhotometricConfig(alpha=0), 0.7, valid)
        # gamma is the 3rd smallest of the 3 valid errors
        assert m.tolist() == [[True, True, False, False]]

    def test_no_valid_pixels(self):
        with pytest.raises(EmptyDomainError):
            cycle_mask(np.zeros((2, 2)), np.zeros((2, 2)), valid=np.zeros((2, 2), dtype=bool))

    @given(st.lists(st.floats(0, 1), min_size=2, max_size=40, unique=True))
    def test_at_most_rank_minus_one_under_distinct_errors(self, errs):
        y = np.array(errs).reshape(1, -1)
        m = cycle_mask(np.zeros_like(y), y, PhotometricConfig(alpha=0), 0.7)
        n = len(errs)
        if np.sort(errs)[math.ceil(round(0.7 * n, 9)) - 1] > min(errs):
            assert m.sum() == math.ceil(round(0.7 * n, 9)) - 1
        else:
            assert m.sum() == 1


class TestCycleMaskOcclusion:
    def test_exact_resampling_isolates_occlusion(self):
        # integer disparities on both depths make the round trip a pure pixel copy
        from scipy import ndimage
        from tcdepth.geometry import Pose, relative_pose, warp_backward
        from tcdepth.synth import Box, Plane, SceneSpec, visibility
        w, h = 320, 96
        k = kitti_like_intrinsics(w, h)
        scene = SceneSpec([Plane((0, 0, 16.0), (0, 0, -1), texture=2), Box((-1, -0.8, 2.0), (1, 0.8, 3.0))])
        poses = [Pose.identity(), Pose(np.eye(3), (32 * 2.0 / k.fx, 0, 0))]
        rt, rs = (render(scene, p, k, w, h) for p in poses)
        t_to_s = relative_pose(poses[0], poses[1])
        i_ts, ok = warp_backward(rt.image, rs.depth, t_to_s.inverse(), k)
        i_tst, ok2 = warp_backward(i_ts, rt.depth, t_to_s, k, src_valid=ok)
        _, occluded = visibility(scene, rt.depth, poses[0], poses[1], k, w, h)
        failed = ok2 & (np.abs(rt.image - i_tst).max(axis=-1) > 0)
        np.testing.assert_array_equal(failed, occluded & ok2)
        # with most errors exactly zero the threshold falls to zero and only the failures,
        # spread by the SSIM window, are excluded
        excluded = ok2 & ~cycle_mask(rt.image, i_tst, valid=ok2)
        np.testing.assert_array_equal(excluded, ok2 & ndimage.binary_dilation(failed, np.ones((3, 3))))


class TestMinMask:
    def test_two_sources(self):
        a, b = min_mask([np.array([0.1]), np.array([0.2])])
        assert (a[0], b[0]) == (True, False)

    def test_tie_goes_to_lowest_index(self):
        a, b = min_mask([np.array([0.1]), np.array([0.1])])
        assert (a[0], b[0]) == (True, False)

    def test_three_sources(self):
        masks = min_mask([np.array([3.0]), np.array([1.0]), np.array([2.0])])
        assert [m[0] for m in masks] == [False, True, False]

    def test_invalid_candidates_skipped(self):
        a, b = min_mask([np.array([0.1, 0.1]), np.array([0.2, 0.2])],
                        [np.array([False, False]), np.array([True, False])])
        assert a.tolist() == [False, False] and b.tolist() == [True, False]

    def test_needs_two_sources(self):
        with pytest.raises(InvalidInputError):
            min_mask([np.zeros(2)])

    @given(arrays(np.float64, (3, 5), elements=st.floats(0, 1)))
    def test_exactly_one_source_per_pixel(self, errs):
        masks = min_mask(list(errs))
        assert np.all(np.sum(masks, axis=0) == 1)


class TestAutoMask:
    def test_static_scene_exact_warp(self, rng):
        i_t = rng.uniform(size=(5, 5, 3))
        src = rng.uniform(size=(5, 5, 3))
        assert auto_mask(i_t, [src], [i_t]).all()

    def test_degenerate_static_camera(self, rng):
        i_t = rng.uniform(size=(5, 5, 3))
        assert not auto_mask(i_t, [i_t, i_t], [i_t, i_t]).any()

    def test_comoving_patch(self):
        w, h = 160, 48
        k = kitti_like_intrinsics(w, h)
        scene = preset_scene("street")
        poses = make_trajectory(TrajectorySpec("translate-x", 3, 0.3))
        renders = [render(scene, p, k, w, h) for p in poses]
        rows, cols = slice(16, 32), slice(64, 96)
        imgs, d_t = comoving_patch([r.image for r in renders], renders[1].depth, rows, cols, patch_depth=5.0)
        # the patch moves with the camera, so the true depth is irrelevant for its pixels
        from tcdepth.geometry import relative_pose, warp_backward
        warped, valid = [], []
        for s in (0, 2):
            wi, ok = warp_backward(imgs[s], d_t, relative_pose(poses[1], poses[s]), k)
            warped.append(wi)
            valid.append(ok)
        m = auto_mask(imgs[1], [imgs[0], imgs[2]], warped, warped_valid=valid)
        assert not m[rows, cols][2:-2, 2:-2].any()
        background = np.ones((h, w), dtype=bool)
        background[12:36, 60:100] = False
        both = valid[0] & valid[1] & background
        assert m[both].mean() > 0.95

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            auto_mask(np.zeros((2, 2)), [np.zeros((2, 2))], [])


class TestMotion:
    @pytest.mark.parametrize("d, t, expected", [(1.0, 1.0, True), (2.0, 1.0, False), (1.5, 1.0, True),
                                                (1.0, 2.0, False), (1.0, 1.5, True), (1.6, 1.0, False)])
    def test_truth_table(self, d, t, expected):
        assert motion_mask(np.array([d]), np.array([t]))[0] == expected

    def test_threshold_is_strict(self):
        # (1.6 - 1) / 1 sits on the threshold up to rounding; use exactly representable values
        assert not motion_mask(np.array([1.625]), np.array([1.0]), 0.625)[0]

    def test_non_positive_rejected(self):
        with pytest.raises(InvalidInputError):
            motion_mask(np.array([0.0]), np.array([1.0]))

    def test_loss_on_moving_pixels(self):
        d, t = np.array([[2.0, 1.0]]), np.array([[1.0, 1.0]])
        r = motion_loss(d, t, motion_mask(d, t))
        assert r.map.tolist() == [[1.0, 0.0]]
        assert r.scalar == 1.0 and r.mask.tolist() == [[True, False]]

    def test_loss_empty_domain_is_zero(self):
        d = np.ones((2, 2))
        r = motion_loss(d, d, motion_mask(d, d))
        assert r.scalar == 0.0 and not r.mask.any()


class TestPhotometricLoss:
    def test_perfect_warps(self, rng):
        i_t = rng.uniform(size=(5, 5, 3))
        assert photometric_loss(i_t, [i_t, i_t]).scalar == 0.0

    def test_per_pixel_minimum(self):
        cfg = PhotometricConfig(alpha=0)
        r = photometric_loss(np.zeros((1, 1)), [np.full((1, 1), 0.2), np.full((1, 1), 0.1)], cfg=cfg)
        assert r.scalar == pytest.approx(0.1)

    def test_masked_pixel_excluded(self):
        cfg = PhotometricConfig(alpha=0)
        i_t = np.zeros((1, 2))
        w = np.array([[0.4, 0.2]])
        r = photometric_loss(i_t, [w, w], m_auto=np.array([[True, False]]), cfg=cfg)
        assert r.scalar == pytest.approx(0.4) and r.map[0, 1] == 0

    def test_invalid_candidate_left_out_of_min(self):
        cfg = PhotometricConfig(alpha=0)
        i_t = np.zeros((1, 2))
        a, b = np.array([[0.1, 0.1]]), np.array([[0.3, 0.3]])
        r = photometric_loss(i_t, [a, b], cfg=cfg, warped_valid=[np.array([[False, True]]), np.array([[True, False]])])
        np.testing.assert_allclose(r.map, [[0.3, 0.1]])

    def test_mask_semantics(self, rng):
        i_t = rng.uniform(size=(6, 6, 3))
        warped = [rng.uniform(size=(6, 6, 3)) for _ in range(2)]
        m = rng.uniform(size=(6, 6)) < 0.5
        full = photometric_loss(i_t, warped)
        masked = photometric_loss(i_t, warped, m_motion=m)
        assert masked.scalar == pytest.approx(full.map[m].mean())


class TestSmoothness:
    def test_constant_depth(self, rng):
        assert smoothness_loss(np.full((4, 5), 3.0), rng.uniform(size=(4, 5, 3))).scalar == 0.0

    def test_step_on_flat_image(self):
        d = np.ones((3, 4))
        d[:, 2:] = 2.0
        r = smoothness_loss(d, np.zeros((3, 4, 3)))
        assert r.scalar > 0
        assert np.all(r.map[:, 1] > 0) and np.all(r.map[:, [0, 2, 3]] == 0)

    def test_two_by_two_edge(self):
        # depth step between the columns coinciding with an image edge of height g = 0.5
        d = np.array([[1.0, 2.0], [1.0, 2.0]])
        img = np.array([[0.0, 0.5], [0.0, 0.5]])
        # normalised inverse depth (4/3, 2/3): |dx| = 2/3 on both rows, weight e^-0.5; mean over 4 pixels
        assert smoothness_loss(d, img).scalar == pytest.approx(0.2021768865708778, rel=1e-12)

    def test_scale_invariant(self, rng):
        d = rng.uniform(1, 5, (5, 5))
        img = rng.uniform(size=(5, 5, 3))
        assert smoothness_loss(3 * d, img).scalar == pytest.approx(smoothness_loss(d, img).scalar, rel=1e-12)

    def test_invalid_depth_rejected(self):
        with pytest.raises(InvalidInputError):
            smoothness_loss(np.array([[1.0, 0.0]]), np.zeros((1, 2)))


class TestGeometricLoss:
    def test_examples(self):
        ok = np.ones((1, 3), dtype=bool)
        r = geometric_loss((np.array([[3.0, 2.0, 4.0]]), np.array([[3.0, 4.0, 2.0]]), ok))
        np.testing.assert_allclose(r.map, [[0.0, 0.5, 0.5]])

    def test_masks_combine(self):
        a, b = np.array([[1.0, 2.0, 4.0, 8.0]]), np.full((1, 4), 2.0)
        ok = np.array([[True, True, True, False]])
        r = geometric_loss((a, b, ok), np.array([[True, True, False, True]]), None, np.array([[True, False, True, True]]))
        assert r.mask.tolist() == [[True, False, False, False]]
        assert r.scalar == pytest.approx(0.5)

    def test_accepts_depth_consistency_pair(self):
        k = Intrinsics(10, 10, 3.5, 2.5)
        d = DepthMap(np.full((6, 8), 4.0))
        r = geometric_loss(depth_consistency_pair(d, d, Pose.identity(), k))
        assert r.scalar == 0.0 and r.mask.all()

    @given(maps(), maps())
    def test_range_and_symmetry(self, a, b):
        ok = np.ones(a.shape, dtype=bool)
        r1 = geometric_loss((a, b, ok))
        r2 = geometric_loss((b, a, ok))
        assert np.all((r1.map >= 0) & (r1.map < 1))
        np.testing.assert_array_equal(r1.map, r2.map)

    @given(maps(), maps(), st.sampled_from([0.5, 2.0, 4.0, 0.125]))
    def test_power_of_two_scaling_exact(self, a, b, s):
        ok = np.ones(a.shape, dtype=bool)
        np.testing.assert_array_equal(geometric_loss((a, b, ok)).map, geometric_loss((a * s, b * s, ok)).map)

    @given(maps(), maps(), st.floats(0.01, 100))
    def test_scale_invariance(self, a, b, s):
        ok = np.ones(a.shape, dtype=bool)
        np.testing.assert_allclose(geometric_loss((a, b, ok)).map, geometric_loss((a * s, b * s, ok)).map,
                                   atol=1e-15, rtol=1e-14)


class TestReferenceLoss:
    def test_identical(self, rng):
        d = rng.uniform(1, 5, (3, 3))
        assert reference_loss(d, d).scalar == 0.0

    def test_constant_offset(self, rng):
        d = rng.uniform(1, 5, (3, 3))
        assert reference_loss(d, d + 0.5).scalar == pytest.approx(0.5)

    def test_half_differ(self):
        d = np.ones((2, 2))
        assert reference_loss(d, np.array([[2.0, 1.0], [1.0, 2.0]])).scalar == 0.5

    def test_sparse_reference_masks(self):
        r = reference_loss(DepthMap(np.array([[1.0, 0.0]])), np.array([[3.0, 5.0]]))
        assert r.scalar == 2.0 and r.mask.tolist() == [[True, False]]


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss({n: 0.0 for n in LOSS_NAMES}) == 0.0

    def test_weighted_sum(self):
        w = LossWeights(lambda_s=2, lambda_geo=3, lambda_m=4)
        assert total_loss({n: 1.0 for n in LOSS_NAMES}, w) == 11.0

    def test_zero_weights(self):
        c = {"photo": 0.3, "smooth": 5, "geo": 7, "motion": 9, "ref": 0.2}
        assert total_loss(c, LossWeights(0, 0, 0)) == pytest.approx(0.5)

    def test_accepts_results(self):
        r = LossResult(0.25, np.zeros((1, 1)), np.ones((1, 1), dtype=bool))
        assert total_loss({"photo": r, "geo": r}) == pytest.approx(0.25 + 0.025)

    def test_unknown_component(self):
        with pytest.raises(InvalidInputError):
            total_loss({"photometric": 1.0})


class TestTripletLosses:
    def test_perfect_triplet(self, small_k):
        # fronto-parallel faces under sideways motion keep depth constant along each warp
        scene = preset_scene("box")
        poses = make_trajectory(TrajectorySpec("translate-x", 3, 0.3))
        r = [render(scene, p, small_k, 160, 48) for p in poses]
        res = triplet_losses([x.image for x in r], [x.depth for x in r], poses, small_k, ref_depth=r[1].depth)
        for name in LOSS_NAMES:
            assert np.isfinite(res.results[name].scalar) and res.results[name].scalar >= 0
        assert res.results["geo"].scalar == 0.0
        assert res.results["ref"].scalar == 0.0
        assert res.results["photo"].scalar < 0.05
        assert res.total == pytest.approx(total_loss(res.results))
        assert res.masks["motion"].all()

    def test_teacher_flags_wrong_region(self, small_k):
        scene = preset_scene("plane")
        poses = make_trajectory(TrajectorySpec("translate-x", 3, 0.2))
        r = [render(scene, p, small_k, 160, 48) for p in poses]
        teacher = r[1].depth
        student = teacher.values.copy()
        student[10:20, 10:20] *= 2.5
        depths = [r[0].depth, DepthMap(student), r[2].depth]
        res = triplet_losses([x.image for x in r], depths, poses, small_k, teacher=teacher)
        assert not res.masks["motion"][10:20, 10:20].any()
        assert res.masks["motion"].sum() == 160 * 48 - 100
        assert res.results["motion"].scalar == pytest.approx(1.5 * 8.0)

    def test_street_geo_residual_small(self, small_k):
        scene = preset_scene("street")
        poses = make_trajectory(TrajectorySpec("translate-z", 3, 0.5))
        r = [render(scene, p, small_k, 160, 48) for p in poses]
        res = triplet_losses([x.image for x in r], [x.depth for x in r], poses, small_k)
        geo = res.results["geo"]
        assert geo.scalar < 1e-3
        assert np.median(geo.map[geo.mask]) < 1e-6

    def test_needs_three_frames(self, small_k):
        with pytest.raises(InvalidInputError):
            triplet_losses([], [], [], small_k)
