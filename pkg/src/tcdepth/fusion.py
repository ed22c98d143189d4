"""Fuse per-frame depth predictions into one coloured point cloud."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, TcDepthError
from .geometry import backproject_grid


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    frame_index: np.ndarray  # (N,) source frame of each point

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8), np.zeros(0, dtype=np.int64))


def _to_uint8(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def fuse_pointcloud(seq: Sequence, ref_index: int = 0, use_gt_pose: bool = True, stride: int = 1,
                    frame: str = "reference") -> PointCloud:
    """Back-project every ``stride``-th valid pixel of each frame into one cloud.

    Points are expressed in the reference camera (``frame="reference"``) or
    in world coordinates (``frame="world"``). Poses come from ``gt_pose`` or,
    with ``use_gt_pose=False``, from ``est_pose``.
    """
    frames = list(seq)
    if not frames:
        raise InvalidInputError("cannot fuse an empty sequence")
    if not 0 <= ref_index < len(frames):
        raise InvalidInputError(f"reference index {ref_index} outside a sequence of {len(frames)}")
    if stride < 1:
        raise InvalidInputError("stride must be at least 1")
    if frame not in ("reference", "world"):
        raise InvalidInputError(f"unknown output frame {frame!r}")
    attr = "gt_pose" if use_gt_pose else "est_pose"
    poses = [getattr(f, attr, None) for f in frames]
    missing = [i for i, p in enumerate(poses) if p is None]
    if missing:
        raise InvalidInputError(f"frames {missing} have no {attr.replace('_', ' ')}")
    world_to_out = poses[ref_index].inverse() if frame == "reference" else None

    pts, cols, idx = [], [], []
    for i, (f, pose) in enumerate(zip(frames, poses)):
        depth = f.pred_depth
        sample = np.zeros(depth.shape, dtype=bool)
        sample[::stride, ::stride] = True
        sample &= depth.valid
        to_out = pose if world_to_out is None else world_to_out @ pose
        pts.append(to_out.apply(backproject_grid(f.intrinsics, depth)[sample]))
        cols.append(_to_uint8(f.image)[sample])
        idx.append(np.full(int(sample.sum()), i, dtype=np.int64))
    return PointCloud(np.concatenate(pts), np.concatenate(cols), np.concatenate(idx))


def _num(x: float) -> str:
    return repr(float(x)) if x != int(x) or abs(x) >= 1e16 else str(int(x))


def write_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with ``x y z red green blue`` per vertex."""
    if not np.all(np.isfinite(cloud.points)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
             "property double x", "property double y", "property double z",
             "property uchar red", "property uchar green", "property uchar blue", "end_header"]
    for p, c in zip(cloud.points.tolist(), cloud.colors.tolist()):
        lines.append(" ".join(_num(x) for x in p) + " " + " ".join(str(int(x)) for x in c))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise TcDepthError(f"{path}: cannot write PLY: {exc.strerror or exc}") from exc


def read_ply(path) -> PointCloud:
    """Read back an ASCII PLY written by :func:`write_ply`."""
    lines = Path(path).read_text().splitlines()
    n = int(next(l for l in lines if l.startswith("element vertex")).split()[-1])
    body = lines[lines.index("end_header") + 1:][:n]
    data = np.array([l.split() for l in body], dtype=np.float64).reshape(n, 6)
    return PointCloud(data[:, :3], data[:, 3:].astype(np.uint8), np.zeros(n, dtype=np.int64))
