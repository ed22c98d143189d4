# %% [markdown]
# # Training losses on a synthetic triplet
#
# The photometric term compares the target with warped neighbours. The
# other terms regularise depth.
# - smoothness: edge-aware smoothing
# - geometric: cross-frame depth agreement
# - motion: disagreement with a teacher
# - reference: distance to a reference depth

# %%
import numpy as np

from tcdepth.geometry import DepthMap, relative_pose, warp_backward
from tcdepth.losses import (
    LossWeights,
    cycle_mask,
    min_mask,
    photometric_error,
    ssim,
    total_loss,
    triplet_losses,
)
from tcdepth.synth import TrajectorySpec, kitti_like_intrinsics, make_trajectory, preset_scene, render

w, h = 320, 96
k = kitti_like_intrinsics(w, h)
scene = preset_scene("box")
poses = make_trajectory(TrajectorySpec("translate-x", 3, 0.3))
r = [render(scene, p, k, w, h) for p in poses]

# %%
x = r[1].image
print("SSIM(x, x) == 1 everywhere:", bool(np.all(ssim(x, x) == 1)))
print("photometric error of a shifted copy:", float(photometric_error(x, np.roll(x, 1, axis=1)).mean()))

# %% [markdown]
# With exact depth and poses every term except smoothness is close to zero.

# %%
res = triplet_losses([f.image for f in r], [f.depth for f in r], poses, k, ref_depth=r[1].depth)
for name, lr in res.results.items():
    print(f"{name:7s} {lr.scalar:.6f} coverage {lr.coverage:.3f}")
print("total", res.total)

# %% [markdown]
# Doubling depth in a patch of the student map trips the motion mask there.

# %%
student = r[1].depth.values.copy()
student[30:50, 100:140] *= 2
res = triplet_losses([f.image for f in r], [r[0].depth, DepthMap(student), r[2].depth], poses, k,
                     teacher=r[1].depth)
print("pixels flagged as moving:", int((~res.masks["motion"]).sum()), "of", 20 * 40)

# %% [markdown]
# Occlusion handling. The round trip target -> source -> target fails where
# the box hides the wall. The cycle mask drops a fixed share of the worst
# round-trip pixels. The min mask keeps for each pixel only the best source.

# %%
errs, valids = [], []
for s in (0, 2):
    t_to_s = relative_pose(poses[1], poses[s])
    warped, ok = warp_backward(r[s].image, r[1].depth, t_to_s, k)
    errs.append(photometric_error(r[1].image, warped, valid=ok))
    valids.append(ok)
    i_ts, ok_ts = warp_backward(r[1].image, r[s].depth, t_to_s.inverse(), k)
    i_tst, ok2 = warp_backward(i_ts, r[1].depth, t_to_s, k, src_valid=ok_ts)
    keep = cycle_mask(r[1].image, i_tst, valid=ok2)
    print(f"source {s}: cycle mask keeps {keep[ok2].mean():.3f} of round-trip pixels")
chosen = min_mask(errs, valids)
print("min mask keeps", [round(float(m.mean()), 3) for m in chosen])

# %%
print(total_loss({"photo": 0.2, "smooth": 3.0, "geo": 0.5}, LossWeights()))
