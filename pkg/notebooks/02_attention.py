# %% [markdown]
# # Spatial and temporal attention on a coarse grid
#
# Spatial weights decay with the 3-D distance between back-projected pixels,
# temporal weights are a softmax over feature similarity with other frames.

# %%
import numpy as np

from tcdepth.attention import (
    SpatialAttentionConfig,
    apply_attention,
    downsample_mean,
    spatial_attention,
    spatial_temporal_aggregate,
    temporal_attention,
)
from tcdepth.synth import TrajectorySpec, kitti_like_intrinsics, preset_scene, synthetic_sequence

w, h, factor = 320, 96, 8
k = kitti_like_intrinsics(w, h)
frames = synthetic_sequence(preset_scene("street"), TrajectorySpec("translate-z", 3, 0.5), k, w, h)
coarse_shape = (h // factor, w // factor)
kc = k.resized(1 / factor, 1 / factor)
depths = [downsample_mean(f.pred_depth.values, coarse_shape) for f in frames]
feats = [downsample_mean(f.image, coarse_shape) for f in frames]
print("coarse grid", coarse_shape)

# %% [markdown]
# Spatial attention for the middle frame. Points on the same object get
# larger weights than points across a depth edge, even if they are adjacent
# in the image.

# %%
a_sp = spatial_attention(depths[1], kc, SpatialAttentionConfig(sigma=2.0))
row = a_sp.row(20, 6).reshape(coarse_shape)
print("weights around query (u=20, v=6):")
print(np.array2string(row[4:9, 17:24], precision=2))
print("symmetric:", bool(np.array_equal(a_sp.weights, a_sp.weights.T)))

# %% [markdown]
# Doubling every depth doubles all 3-D distances, so every off-diagonal
# weight shrinks.

# %%
a2 = spatial_attention(2 * depths[1], kc, SpatialAttentionConfig(sigma=2.0))
off = ~np.eye(len(a2.weights), dtype=bool)
print("all off-diagonal weights decreased:", bool(np.all(a2.weights[off] < a_sp.weights[off])))

# %% [markdown]
# Temporal attention from the middle frame to its two neighbours.

# %%
a_tm = temporal_attention(feats[1], [feats[0], feats[2]])
print("row sums:", a_tm.weights.sum(axis=1)[:4])
out = apply_attention(a_tm, [feats[0], feats[2]])
print("attended features shape", out.shape)

# %%
fused = spatial_temporal_aggregate(feats, depths, kc, SpatialAttentionConfig(sigma=2.0))
print(len(fused), "fused maps; mean residual update of the middle frame", float(np.abs(fused[1] - feats[1]).mean()))
