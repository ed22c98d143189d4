import numpy as np
import pytest

from tcdepth.errors import InvalidInputError
from tcdepth.fusion import PointCloud, fuse_pointcloud, read_ply, write_ply
from tcdepth.geometry import DepthMap, Pose, rotation_y
from tcdepth.synth import TrajectorySpec, kitti_like_intrinsics, preset_scene, surface_residual, synthetic_sequence
from tcdepth.tcm import FrameSample

W, H = 64, 20


@pytest.fixture(scope="module")
def seq():
    k = kitti_like_intrinsics(W, H)
    return synthetic_sequence(preset_scene("street"), TrajectorySpec("translate-z", 4, 0.5), k, W, H)


class TestFuse:
    def test_point_count(self, seq):
        cloud = fuse_pointcloud(seq)
        assert len(cloud) == 4 * W * H
        np.testing.assert_array_equal(np.bincount(cloud.frame_index), [W * H] * 4)

    def test_count_matches_valid_pixels(self, seq):
        sparse = [FrameSample(f.image, DepthMap(f.pred_depth.values, f.pred_depth.values < 20), f.gt_depth,
                              f.gt_pose, f.intrinsics) for f in seq]
        cloud = fuse_pointcloud(sparse)
        assert len(cloud) == sum(int((f.pred_depth.values < 20).sum()) for f in seq)

    def test_stride(self, seq):
        assert len(fuse_pointcloud(seq, stride=2)) == 4 * (W // 2) * (H // 2)

    def test_perfect_depth_lands_on_surfaces(self, seq):
        scene = preset_scene("street")
        cloud = fuse_pointcloud(seq, frame="world")
        assert surface_residual(scene, cloud.points).max() < 1e-9

    def test_residual_grows_with_noise(self, seq):
        scene = preset_scene("street")
        rng = np.random.default_rng(0)
        factors = rng.uniform(-1, 1, len(seq))
        means = []
        for a in (0.0, 0.02, 0.1, 0.3):
            noisy = [FrameSample(f.image, DepthMap(f.gt_depth.values * (1 + a * c)), f.gt_depth, f.gt_pose,
                                 f.intrinsics) for f, c in zip(seq, factors)]
            means.append(np.mean(surface_residual(scene, fuse_pointcloud(noisy, frame="world").points)))
        assert means[0] < 1e-9
        assert all(b > a for a, b in zip(means, means[1:]))

    def test_reference_vs_world(self, seq):
        ref = fuse_pointcloud(seq, ref_index=2)
        world = fuse_pointcloud(seq, ref_index=2, frame="world")
        np.testing.assert_allclose(seq[2].gt_pose.apply(ref.points), world.points, atol=1e-12)

    def test_reference_frame_pixels_are_backprojection(self, seq):
        cloud = fuse_pointcloud(seq, ref_index=0)
        z = cloud.points[cloud.frame_index == 0][:, 2].reshape(H, W)
        np.testing.assert_allclose(z, seq[0].pred_depth.values, rtol=1e-12)

    def test_rigid_invariance(self, seq):
        # moving the whole rig moves the world cloud but not the reference cloud
        g = Pose(rotation_y(0.3), (1.0, -2.0, 0.5))
        moved = [FrameSample(f.image, f.pred_depth, f.gt_depth, g @ f.gt_pose, f.intrinsics) for f in seq]
        np.testing.assert_allclose(fuse_pointcloud(moved).points, fuse_pointcloud(seq).points, atol=1e-9)
        np.testing.assert_allclose(fuse_pointcloud(moved, frame="world").points,
                                   g.apply(fuse_pointcloud(seq, frame="world").points), atol=1e-9)

    def test_colors(self, seq):
        cloud = fuse_pointcloud(seq)
        assert cloud.colors.dtype == np.uint8
        np.testing.assert_array_equal(cloud.colors[:W * H].reshape(H, W, 3), np.round(seq[0].image * 255))

    def test_missing_est_pose(self, seq):
        with pytest.raises(InvalidInputError, match="est pose"):
            fuse_pointcloud(seq, use_gt_pose=False)

    @pytest.mark.parametrize("kwargs", [dict(ref_index=9), dict(stride=0), dict(frame="camera")])
    def test_validation(self, seq, kwargs):
        with pytest.raises(InvalidInputError):
            fuse_pointcloud(seq, **kwargs)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            fuse_pointcloud([])


class TestPly:
    def test_white_point_line(self, tmp_path):
        cloud = PointCloud(np.array([[1.0, 2.0, 3.0]]), np.array([[255, 255, 255]], np.uint8), np.zeros(1, int))
        write_ply(cloud, tmp_path / "c.ply")
        lines = (tmp_path / "c.ply").read_text().splitlines()
        assert lines[2] == "element vertex 1"
        assert lines[lines.index("end_header") + 1] == "1 2 3 255 255 255"

    def test_empty_cloud(self, tmp_path):
        write_ply(PointCloud.empty(), tmp_path / "e.ply")
        text = (tmp_path / "e.ply").read_text()
        assert "element vertex 0" in text and text.endswith("end_header\n")
        assert len(read_ply(tmp_path / "e.ply")) == 0

    def test_round_trip(self, tmp_path, seq):
        cloud = fuse_pointcloud(seq, stride=3)
        write_ply(cloud, tmp_path / "c.ply")
        back = read_ply(tmp_path / "c.ply")
        np.testing.assert_array_equal(back.points, cloud.points)
        np.testing.assert_array_equal(back.colors, cloud.colors)

    def test_non_finite_rejected(self, tmp_path):
        cloud = PointCloud(np.array([[np.nan, 0, 0]]), np.zeros((1, 3), np.uint8), np.zeros(1, int))
        with pytest.raises(InvalidInputError):
            write_ply(cloud, tmp_path / "c.ply")
