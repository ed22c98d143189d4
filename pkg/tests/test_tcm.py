import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tcdepth.errors import EmptyDomainError, InvalidInputError
from tcdepth.geometry import DepthMap, Intrinsics, Pose
from tcdepth.synth import TrajectorySpec, preset_scene, synthetic_sequence
from tcdepth.tcm import (
    CorrespondenceCache,
    FrameSample,
    PixelTracks,
    align_to_reference,
    median_scale,
    tcm,
    tcm_sequence,
    tcm_sweep,
    track_deviation,
)

K = Intrinsics(20.0, 20.0, 7.5, 5.5)


def static_plane(depths, z=5.0, shape=(12, 16)):
    """Static camera looking at a plane; frame f predicts a constant ``depths[f]``."""
    return [FrameSample(np.zeros(shape + (3,)), DepthMap(np.full(shape, d)), DepthMap(np.full(shape, z)),
                        Pose.identity(), K) for d in depths]


@pytest.fixture(scope="module")
def street():
    scene = preset_scene("street")
    k = Intrinsics(46.4, 46.08, 39.5, 11.5)
    return synthetic_sequence(scene, TrajectorySpec("translate-z", 9, 0.5), k, 80, 24)


class TestMedianScale:
    def test_constant_ratio(self):
        scaled, ratio = median_scale(DepthMap(np.full((2, 2), 2.0)), DepthMap(np.full((2, 2), 6.0)))
        assert ratio == 3.0
        np.testing.assert_array_equal(scaled.values, 6.0)

    def test_median_over_joint_valid(self):
        pred = DepthMap(np.array([[1.0, 2.0, 3.0, 100.0]]))
        gt = DepthMap(np.array([[2.0, 4.0, 6.0, 0.0]]))
        assert median_scale(pred, gt)[1] == 2.0

    def test_no_overlap(self):
        with pytest.raises(EmptyDomainError):
            median_scale(DepthMap(np.array([[1.0, 0.0]])), DepthMap(np.array([[0.0, 1.0]])))


class TestTracks:
    def test_from_lists(self):
        t = PixelTracks.from_lists([[(1.0, 1.0), (2.0, 1.0)], [(3.0, 3.0)]])
        assert len(t) == 2
        assert t.track(0) == [(1.0, 1.0), (2.0, 1.0)]
        assert t.track(1) == [(3.0, 3.0)]

    def test_deviation(self):
        dev, sq = track_deviation(PixelTracks.from_lists([[(1.1, 1.0), (0.9, 1.0)]]))
        assert dev[0] == pytest.approx(0.1) and sq[0] == pytest.approx(0.01)


class TestTcmAggregation:
    def test_outlier_example(self):
        tracks = PixelTracks.from_lists([[(1.1, 1.0)]] * 8 + [[(6.0, 1.0)]] * 2)
        r = tcm(tracks)
        assert r.abs_err == pytest.approx(0.1)
        assert r.n_tracks == 8 and r.outlier_fraction_applied == 0.2

    def test_single_track(self):
        r = tcm(PixelTracks.from_lists([[(1.3, 1.0)]]))
        assert r.abs_err == pytest.approx(0.3)
        assert r.sq_err == pytest.approx(0.09)
        assert r.rmse == pytest.approx(0.3)
        assert r.n_tracks == 1

    def test_zero_outlier_fraction_keeps_all(self):
        r = tcm(PixelTracks.from_lists([[(1.1, 1.0)], [(2.0, 1.0)]]), outlier_fraction=0.0)
        assert r.abs_err == pytest.approx(0.55)

    def test_floor_of_drop_count(self):
        # 0.2 * 4 = 0.8 tracks, floored to none
        r = tcm(PixelTracks.from_lists([[(2.0, 1.0)]] * 4))
        assert r.n_tracks == 4 and r.outlier_fraction_applied == 0.0

    @pytest.mark.parametrize("f", [-0.1, 1.0])
    def test_bad_fraction(self, f):
        with pytest.raises(InvalidInputError):
            tcm(PixelTracks.from_lists([[(1.0, 1.0)]]), outlier_fraction=f)

    def test_empty(self):
        with pytest.raises(EmptyDomainError):
            tcm(PixelTracks.from_lists([]))

    @given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=40), st.floats(0.0, 0.9))
    def test_dropping_never_increases_abs_err(self, devs, f):
        tracks = PixelTracks.from_lists([[(1.0 + d, 1.0)] for d in devs])
        assert tcm(tracks, f).abs_err <= tcm(tracks, 0.0).abs_err + 1e-12

    @given(st.lists(st.floats(0.0, 5.0), min_size=1, max_size=40))
    def test_rmse_at_least_abs_err_per_track(self, devs):
        tracks = PixelTracks.from_lists([[(1.0 + d, 1.0), (1.0 - d / 10, 1.0)] for d in devs])
        r = tcm(tracks, 0.0)
        assert r.rmse >= r.abs_err - 1e-12 and r.sq_err >= 0


class TestAlignment:
    def test_static_plane_offsets(self):
        seq = static_plane([5.0, 5.1, 4.9])
        tracks = align_to_reference(seq, 1)
        assert len(tracks) == 12 * 16
        dev, _ = track_deviation(tracks)
        np.testing.assert_allclose(dev, 0.3 / 15.3, rtol=1e-12)
        assert tcm(tracks).abs_err == pytest.approx(0.3 / 15.3, rel=1e-12)

    def test_ratio_from_reference_only(self):
        # the reference already agrees with GT, so the other frames keep their bias
        seq = static_plane([6.0, 5.0, 6.0])
        tracks = align_to_reference(seq, 1)
        np.testing.assert_allclose(tracks.pred[:, 0], 6.0)
        np.testing.assert_allclose(tracks.gt, 5.0)

    def test_explicit_ratio(self):
        tracks = align_to_reference(static_plane([1.0, 1.0, 1.0]), 1, scale_ratio=5.0)
        np.testing.assert_allclose(tracks.pred, 5.0)

    def test_track_leaving_frame_is_shortened(self):
        shape = (12, 16)
        poses = [Pose.identity(), Pose(np.eye(3), [1.0, 0.0, 0.0]), Pose(np.eye(3), [2.0, 0.0, 0.0])]
        seq = [FrameSample(np.zeros(shape + (3,)), DepthMap(np.full(shape, 5.0)), DepthMap(np.full(shape, 5.0)),
                           p, K) for p in poses]
        tracks = align_to_reference(seq, 1)
        # 1 m at 5 m depth is 4 px: the camera moving right pushes points left
        u = tracks.ref_pixels[:, 0]
        np.testing.assert_array_equal(tracks.observed[:, 2], u >= 4)
        np.testing.assert_array_equal(tracks.observed[:, 0], u < 12)
        assert tracks.observed.sum(axis=1).min() == 2
        assert np.all(tracks.observed[:, 1])

    def test_short_tracks_dropped(self):
        shape = (12, 16)
        poses = [Pose.identity(), Pose(np.eye(3), [3.0, 0.0, 0.0])]
        seq = [FrameSample(np.zeros(shape + (3,)), DepthMap(np.full(shape, 5.0)), DepthMap(np.full(shape, 5.0)),
                           p, K) for p in poses]
        tracks = align_to_reference(seq, 0)
        assert np.all(tracks.ref_pixels[:, 0] >= 12)
        assert len(tracks) == 4 * 12

    def test_window_validation(self):
        with pytest.raises(InvalidInputError):
            align_to_reference(static_plane([5.0, 5.0]), 2)
        with pytest.raises(InvalidInputError):
            align_to_reference(static_plane([5.0]), 0)

    def test_frame_resolution_check(self):
        with pytest.raises(InvalidInputError):
            FrameSample(np.zeros((4, 4, 3)), DepthMap(np.ones((4, 5))), DepthMap(np.ones((4, 4))), Pose.identity(), K)


class TestSequence:
    def test_perfect_predictions(self, street):
        for k, r in tcm_sweep(street).items():
            assert r.abs_err == 0.0 and r.sq_err == 0.0 and r.rmse == 0.0
            assert r.n_windows == len(street) - k + 1

    def test_scale_invariance(self, street):
        base = tcm_sequence(street, 3)
        for s in (0.5, 2.0, 10.0):
            scaled = [FrameSample(f.image, DepthMap(f.pred_depth.values * s + 0.0), f.gt_depth, f.gt_pose, f.intrinsics)
                      for f in street]
            assert tcm_sequence(scaled, 3).abs_err == pytest.approx(base.abs_err, abs=1e-12)

    def test_scale_invariance_noisy(self, street):
        rng = np.random.default_rng(5)
        factors = 1 + 0.05 * rng.uniform(-1, 1, len(street))
        noisy = [FrameSample(f.image, DepthMap(f.gt_depth.values * c), f.gt_depth, f.gt_pose, f.intrinsics)
                 for f, c in zip(street, factors)]
        base = tcm_sequence(noisy, 5)
        assert base.abs_err > 0
        for s in (0.5, 2.0, 10.0):
            scaled = [FrameSample(f.image, DepthMap(f.pred_depth.values * s), f.gt_depth, f.gt_pose, f.intrinsics)
                      for f in noisy]
            assert tcm_sequence(scaled, 5).abs_err == pytest.approx(base.abs_err, rel=1e-9)

    def test_sweep_matches_explicit_windows(self, street):
        # independent route: materialise every window's tracks and aggregate directly
        rng = np.random.default_rng(9)
        noisy = [FrameSample(f.image, DepthMap(f.gt_depth.values * (1 + 0.1 * rng.uniform(-1, 1))), f.gt_depth,
                             f.gt_pose, f.intrinsics) for f in street]
        sweep = tcm_sweep(noisy, (3, 5))
        for k in (3, 5):
            reports = [tcm(align_to_reference(noisy[s:s + k], k // 2)) for s in range(len(noisy) - k + 1)]
            assert sweep[k].abs_err == pytest.approx(np.mean([r.abs_err for r in reports]), rel=1e-12)
            assert sweep[k].sq_err == pytest.approx(np.mean([r.sq_err for r in reports]), rel=1e-12)
            assert sweep[k].rmse == pytest.approx(np.mean([r.rmse for r in reports]), rel=1e-12)

    def test_stride(self, street):
        assert tcm_sequence(street, 3, stride=3).n_windows == 3

    def test_cache_reused(self, street):
        cache = CorrespondenceCache()
        tcm_sequence(street, 3, cache=cache)
        n = len(cache)
        tcm_sequence(street, 3, cache=cache)
        assert len(cache) == n > 0

    def test_validation(self, street):
        with pytest.raises(InvalidInputError):
            tcm_sequence(street[:2], 3)
        with pytest.raises(InvalidInputError):
            tcm_sweep(street, (1,))
        with pytest.raises(InvalidInputError):
            tcm_sequence(street, 3, stride=0)
