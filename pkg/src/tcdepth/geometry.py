"""Pinhole camera math, rigid transforms and backward warping.

Conventions used throughout the package:

* camera frame is right-handed with x right, y down, z forward;
* a pixel ``(u, v)`` is ``(column, row)`` and pixel centres sit on integer
  coordinates, so pixel ``(0, 0)`` covers ``[-0.5, 0.5)^2``;
* ``pose_a_to_b`` maps points expressed in frame ``a`` into frame ``b``
  (``p_b = R p_a + t``). Dataset poses are camera-to-world.

Bulk grids may be float32 or float64; pose and intrinsics math is always
carried out in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BehindCameraError, EmptyDomainError, InvalidInputError

ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy) and math.isfinite(self.fx) and math.isfinite(self.fy)):
            raise InvalidInputError("intrinsics must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def resized(self, sx: float, sy: float) -> "Intrinsics":
        """Intrinsics for an image resampled by factors ``sx`` (width) and ``sy`` (height).

        Pixel centres stay on integer coordinates, i.e. ``u' = (u + 0.5) * sx - 0.5``.
        """
        return Intrinsics(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5
        )


def rotation_x(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(theta: float) -> np.ndarray:
    """Yaw about the camera's (downward) y axis.

    A positive angle turns the forward axis towards +x:
    ``rotation_y(pi/2) @ (1, 0, 0) == (0, 0, -1)``.
    """
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(rotation: np.ndarray) -> float:
    """Angle (radians) of the axis-angle representation of a rotation matrix."""
    cos = (np.trace(rotation) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, cos))))


def is_rotation(rotation: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    r = np.asarray(rotation, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return bool(np.abs(r.T @ r - np.eye(3)).max() <= tol and abs(np.linalg.det(r) - 1.0) <= tol)


@dataclass(frozen=True)
class Pose:
    """Rigid SE(3) transform ``p -> R p + t`` (translation in meters)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not is_rotation(r):
            raise InvalidInputError("rotation is not orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("translation must be finite")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((3, 4), (4, 4)):
            raise InvalidInputError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        r = self.rotation @ other.rotation
        # re-orthonormalise so long chains do not drift
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
        return Pose(r, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


def relative_pose(tgt_to_world: Pose, src_to_world: Pose) -> Pose:
    """Pose mapping target-camera coordinates into source-camera coordinates."""
    return src_to_world.inverse() @ tgt_to_world


def transform(pose: Pose, p) -> np.ndarray:
    return pose.apply(p)


@dataclass
class DepthMap:
    """Depth grid in meters with an explicit validity mask.

    Invalid entries are stored as 0 so they never leak into arithmetic.
    """

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values)
        if values.ndim != 2:
            raise InvalidInputError(f"depth map must be 2-D, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        ok = np.isfinite(values) & (values > 0)
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape:
                raise InvalidInputError("validity mask shape does not match depth values")
            ok &= valid
        values[~ok] = 0
        self.values = values
        self.valid = ok

    @classmethod
    def dense(cls, values) -> "DepthMap":
        return cls(np.asarray(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def scaled(self, s: float) -> "DepthMap":
        return DepthMap(self.values * s, self.valid)

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.valid.copy())


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Column and row coordinates ``(u, v)`` of every pixel, float64, shape (H, W)."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u, v


def backproject(k: Intrinsics, pixel, depth: float) -> np.ndarray:
    """Lift pixel ``(u, v)`` at ``depth`` to a camera-frame point ``K^-1 (d u, d v, d)``."""
    u, v = (float(c) for c in pixel)
    depth = float(depth)
    if not (depth > 0 and math.isfinite(depth)):
        raise InvalidInputError(f"depth must be positive and finite, got {depth}")
    if not (math.isfinite(u) and math.isfinite(v)):
        raise InvalidInputError("pixel coordinates must be finite")
    return np.array([depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth])


def backproject_grid(k: Intrinsics, depth) -> np.ndarray:
    """Back-project every pixel of a depth grid; returns (H, W, 3) float64.

    Accepts a :class:`DepthMap` or a raw array. No validity checking is
    done here, callers carry the mask.
    """
    d = depth.values if isinstance(depth, DepthMap) else np.asarray(depth)
    d = d.astype(np.float64)
    u, v = pixel_grid(*d.shape)
    return np.stack([d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d], axis=-1)


def project(k: Intrinsics, p) -> tuple[tuple[float, float], float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise BehindCameraError(f"cannot project point with z={z}")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy), z


def project_points(k: Intrinsics, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised projection of ``(..., 3)`` points.

    Returns ``(uv, z, in_front)``; ``uv`` is (..., 2) and is set to -1 for
    points that are not strictly in front of the camera.
    """
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    uv = np.stack([k.fx * p[..., 0] / safe_z + k.cx, k.fy * p[..., 1] / safe_z + k.cy], axis=-1)
    uv[~front] = -1.0
    return uv, z, front


SNAP_TOL = 1e-9


def snap_to_grid(coords, tol: float = SNAP_TOL) -> np.ndarray:
    """Round coordinates lying within ``tol`` pixels of a pixel centre onto it.

    Reprojection through an identity (or any exact) transform carries
    rounding noise of order 1e-15 px; snapping keeps such samples exact
    and keeps border pixels in bounds.
    """
    c = np.asarray(coords, dtype=np.float64)
    r = np.round(c)
    return np.where(np.abs(c - r) <= tol, r, c)


def bilinear_sample(grid, coords, valid=None) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``grid`` at sub-pixel ``coords`` (..., 2) holding ``(u, v)``.

    ``grid`` is (H, W), (H, W, C) or a :class:`DepthMap`. A sample is valid
    only if every neighbour with non-zero weight is in bounds and valid, so
    integer coordinates need just the one pixel they hit. Invalid samples
    are returned as 0.
    """
    if isinstance(grid, DepthMap):
        valid = grid.valid if valid is None else (grid.valid & np.asarray(valid, dtype=bool))
        data = grid.values
    else:
        data = np.asarray(grid)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 2:
        raise InvalidInputError("coords must have a trailing dimension of 2")
    if not np.all(np.isfinite(coords)):
        raise InvalidInputError("coords must be finite")
    h, w = data.shape[:2]
    out_dtype = data.dtype if np.issubdtype(data.dtype, np.floating) else np.float64
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        data = np.where(valid.reshape(valid.shape + (1,) * (data.ndim - 2)), data, 0)

    coords = snap_to_grid(coords)
    u, v = coords[..., 0], coords[..., 1]
    u0, v0 = np.floor(u), np.floor(v)
    fu, fv = u - u0, v - v0
    u1 = np.where(fu > 0, u0 + 1, u0)
    v1 = np.where(fv > 0, v0 + 1, v0)
    ok = (u0 >= 0) & (v0 >= 0) & (u1 <= w - 1) & (v1 <= h - 1)
    iu0 = np.clip(u0, 0, w - 1).astype(np.intp)
    iu1 = np.clip(u1, 0, w - 1).astype(np.intp)
    iv0 = np.clip(v0, 0, h - 1).astype(np.intp)
    iv1 = np.clip(v1, 0, h - 1).astype(np.intp)
    if valid is not None:
        ok &= valid[iv0, iu0] & valid[iv0, iu1] & valid[iv1, iu0] & valid[iv1, iu1]

    g00 = data[iv0, iu0].astype(np.float64)
    g01 = data[iv0, iu1].astype(np.float64)
    g10 = data[iv1, iu0].astype(np.float64)
    g11 = data[iv1, iu1].astype(np.float64)
    if data.ndim == 3:
        fu, fv, ok_b = fu[..., None], fv[..., None], ok[..., None]
    else:
        ok_b = ok
    out = (1 - fu) * (1 - fv) * g00 + fu * (1 - fv) * g01 + (1 - fu) * fv * g10 + fu * fv * g11
    out = np.where(ok_b, out, 0.0).astype(out_dtype)
    return out, ok


def bilinear_gradient(grid, coords) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives ``(d/du, d/dv)`` of the bilinear interpolant at ``coords``.

    Only meaningful away from integer coordinates, where the interpolant
    has a kink. Out-of-bounds locations give 0.
    """
    data = grid.values if isinstance(grid, DepthMap) else np.asarray(grid)
    data = data.astype(np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    h, w = data.shape[:2]
    u, v = coords[..., 0], coords[..., 1]
    u0, v0 = np.floor(u), np.floor(v)
    fu, fv = u - u0, v - v0
    ok = (u0 >= 0) & (v0 >= 0) & (u0 + 1 <= w - 1) & (v0 + 1 <= h - 1)
    iu0 = np.clip(u0, 0, w - 2).astype(np.intp)
    iv0 = np.clip(v0, 0, h - 2).astype(np.intp)
    g00, g01 = data[iv0, iu0], data[iv0, iu0 + 1]
    g10, g11 = data[iv0 + 1, iu0], data[iv0 + 1, iu0 + 1]
    if data.ndim == 3:
        fu, fv, ok = fu[..., None], fv[..., None], ok[..., None]
    du = (1 - fv) * (g01 - g00) + fv * (g11 - g10)
    dv = (1 - fu) * (g10 - g00) + fu * (g11 - g01)
    return np.where(ok, du, 0.0), np.where(ok, dv, 0.0)


def reproject(k: Intrinsics, depth, pose_tgt_to_src: Pose, with_jacobian: bool = False):
    """Map every target pixel into the source view.

    Returns ``(uv, z, in_front)`` where ``z`` is the depth of the target point
    in the source camera. With ``with_jacobian`` also returns the
    derivatives ``d(uv)/d(depth)`` (H, W, 2) and ``dz/d(depth)`` (H, W).
    """
    d = depth.values if isinstance(depth, DepthMap) else np.asarray(depth)
    d = d.astype(np.float64)
    u, v = pixel_grid(*d.shape)
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dirs = rays @ pose_tgt_to_src.rotation.T
    q = d[..., None] * dirs + pose_tgt_to_src.translation
    uv, z, front = project_points(k, q)
    if not with_jacobian:
        return uv, z, front
    safe_z = np.where(front, z, 1.0)
    du = k.fx * (dirs[..., 0] * safe_z - q[..., 0] * dirs[..., 2]) / safe_z**2
    dv = k.fy * (dirs[..., 1] * safe_z - q[..., 1] * dirs[..., 2]) / safe_z**2
    return uv, z, front, np.stack([du, dv], axis=-1), dirs[..., 2]


def warp_backward(src, tgt_depth: DepthMap, pose_tgt_to_src: Pose, k: Intrinsics, src_valid=None):
    """Synthesise the target view by sampling ``src`` through the target depth.

    Returns ``(warped, valid)``; invalid pixels (missing depth, behind the
    source camera, outside ``src`` or touching invalid ``src_valid``
    pixels) are 0.
    """
    uv, _, front = reproject(k, tgt_depth, pose_tgt_to_src)
    warped, ok = bilinear_sample(src, uv, src_valid)
    valid = tgt_depth.valid & front & ok
    mask = valid if warped.ndim == 2 else valid[..., None]
    return np.where(mask, warped, 0).astype(warped.dtype), valid


def depth_consistency_pair(tgt_depth: DepthMap, src_depth: DepthMap, pose_tgt_to_src: Pose, k: Intrinsics):
    """Per target pixel, the source-frame depth implied by the target depth
    ("computed") and the source depth sampled at the reprojection
    ("interpolated"). Returns ``(computed, interpolated, valid)``.
    """
    if tgt_depth.shape != src_depth.shape:
        raise InvalidInputError("target and source depth maps differ in shape")
    uv, z, front = reproject(k, tgt_depth, pose_tgt_to_src)
    sampled, ok = bilinear_sample(src_depth, uv)
    valid = tgt_depth.valid & front & ok & (sampled > 0)
    computed = DepthMap(np.where(valid, z, 0.0), valid)
    interpolated = DepthMap(np.where(valid, sampled, 0.0).astype(np.float64), valid)
    return computed, interpolated, valid


def percentile(values, p: float) -> float:
    """Nearest-rank percentile: element ``ceil(p * n) - 1`` of the sorted values."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InvalidInputError("percentile of an empty list")
    if not 0 < p <= 1:
        raise InvalidInputError(f"p must lie in (0, 1], got {p}")
    # round away float noise such as 0.7 * 10 = 7.000000000000001
    rank = math.ceil(round(p * arr.size, 9))
    return float(np.partition(arr, rank - 1)[rank - 1])


def central_difference(fn: Callable[[np.ndarray], float], x, rel_step: float = 1e-3, min_step: float = 1e-8,
                       indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central finite-difference gradient of scalar ``fn`` at ``x``.

    The step for entry ``i`` is ``rel_step * |x_i|`` (at least ``min_step``).
    ``indices`` restricts evaluation to a subset; other entries are 0.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = indices if indices is not None else list(np.ndindex(x.shape))
    for idx in it:
        h = max(rel_step * abs(x[idx]), min_step)
        orig = x[idx]
        x[idx] = orig + h
        f_plus = fn(x)
        x[idx] = orig - h
        f_minus = fn(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * h)
    return grad


def masked_mean(values, mask) -> float:
    """Mean over mask-true entries; 0 for an empty mask."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return 0.0
    return float(np.asarray(values, dtype=np.float64)[mask].sum() / n)


def require_nonempty(mask, what: str) -> int:
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyDomainError(f"no valid pixels for {what}")
    return n
