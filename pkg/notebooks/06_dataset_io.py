# %% [markdown]
# # Sequences on disk
#
# Depth maps are stored as PFM (or 16-bit PNG), poses as KITTI-style
# 3x4 rows, and a small text manifest ties the frames together.

# %%
import tempfile
from pathlib import Path

import numpy as np

from tcdepth.dataset import load_manifest, read_depth_pfm, read_manifest, read_poses, write_pfm, write_sequence
from tcdepth.errors import FormatError
from tcdepth.synth import TrajectorySpec, kitti_like_intrinsics, preset_scene, synthetic_sequence

root = Path(tempfile.mkdtemp())
k = kitti_like_intrinsics(64, 24)
frames = synthetic_sequence(preset_scene("box"), TrajectorySpec("translate-x", 4, 0.2), k, 64, 24, noise=0.05)
manifest = write_sequence(root / "seq", frames)
print(manifest.read_text())

# %%
seq = load_manifest(manifest)
print(len(seq), "frames;", "pose of frame 2:", seq[2].gt_pose.translation)
print("depth stored as float32 exactly:",
      bool(np.array_equal(seq[1].gt_depth.values, frames[1].gt_depth.values.astype(np.float32))))

# %%
print(read_manifest(manifest).frames[0])
print(len(read_poses(root / "seq" / "poses.txt")), "poses")

# %% [markdown]
# Malformed files fail with their location.

# %%
raw = (root / "seq" / "gt_0000.pfm").read_bytes()
(root / "broken.pfm").write_bytes(raw[:-10])
try:
    read_depth_pfm(root / "broken.pfm")
except FormatError as exc:
    print(exc)

write_pfm(root / "tiny.pfm", np.array([[1.5, 0.0]], dtype=np.float32))
print(read_depth_pfm(root / "tiny.pfm").valid)
