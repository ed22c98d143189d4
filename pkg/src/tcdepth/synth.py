"""Deterministic synthetic scenes with analytic depth.

Scenes are built from planes and axis-aligned boxes in a world frame that
shares the camera convention (x right, y down, z forward). Every surface
carries a procedural value-noise texture defined in surface coordinates,
so a 3-D point renders the same colour from any viewpoint. Rendering is
exact ray casting, with no anti-aliasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import DepthMap, Intrinsics, Pose, backproject_grid, pixel_grid, project_points, rotation_y

# (low, high) intensity range per texture id; background uses id 0
PALETTE = [(0.05, 0.45), (0.55, 0.95), (0.30, 0.90), (0.10, 0.70)]

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    texture: int = 1


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    texture: int = 1


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=list)
    background_depth: float = 40.0
    texture_scale: float = 1.5  # meters per lattice cell of the coarsest octave
    seed: int = 0


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str = "static"
    k: int = 3
    step: float = 0.5
    seed: int = 0
    radius: float = 20.0  # arc radius in meters
    jitter: float = 0.0  # uniform positional jitter (meters) drawn from ``seed``

    def __post_init__(self):
        if self.kind not in ("static", "translate-x", "translate-z", "arc"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("trajectory needs at least one frame")
        if not math.isfinite(self.step):
            raise ValueError("step must be finite")


# -- procedural texture ------------------------------------------------------

def _mix(h: np.ndarray) -> np.ndarray:
    # splitmix64 finaliser
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def _lattice(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        h = ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        h ^= iy.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        h ^= np.uint64(salt) * np.uint64(0x165667B19E3779F9)
        h = _mix(h & _MASK64)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(s: np.ndarray, t: np.ndarray, salt: int, octaves: int = 3) -> np.ndarray:
    """Three-octave value noise in [0, 1] with C2 quintic interpolation."""
    total = np.zeros_like(s, dtype=np.float64)
    norm = 0.0
    for o in range(octaves):
        freq, amp = 2.0**o, 0.5**o
        x, y = s * freq, t * freq
        ix, iy = np.floor(x), np.floor(y)
        fx, fy = _fade(x - ix), _fade(y - iy)
        ix, iy = ix.astype(np.int64), iy.astype(np.int64)
        salt_o = salt * 7919 + o
        a = _lattice(ix, iy, salt_o)
        b = _lattice(ix + 1, iy, salt_o)
        c = _lattice(ix, iy + 1, salt_o)
        d = _lattice(ix + 1, iy + 1, salt_o)
        total += amp * ((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy)
        norm += amp
    return total / norm


def surface_color(s: np.ndarray, t: np.ndarray, texture: int, seed: int, surface: int) -> np.ndarray:
    lo, hi = PALETTE[texture % len(PALETTE)]
    channels = [value_noise(s, t, salt=(seed * 1009 + surface) * 3 + c) for c in range(3)]
    return lo + (hi - lo) * np.stack(channels, axis=-1)


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 1.0, 0.0]) if abs(normal[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(normal, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


# -- ray casting ---------------------------------------------------------------

def _scene_planes(scene: SceneSpec) -> list[Plane]:
    planes = [Plane((0.0, 0.0, scene.background_depth), (0.0, 0.0, -1.0), texture=0)]
    planes += [p for p in scene.primitives if isinstance(p, Plane)]
    return planes


def cast_rays(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit along ``origin + lam * dirs`` for world-frame ``dirs`` (..., 3).

    Returns ``(lam, surface_id, hit_points)``; ``surface_id`` is -1 on a
    miss. Planes get one id each; boxes get one id per face.
    """
    shape = dirs.shape[:-1]
    best = np.full(shape, np.inf)
    sid = np.full(shape, -1, dtype=np.int64)
    next_id = 0
    for plane in _scene_planes(scene):
        n = np.asarray(plane.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.where(np.abs(denom) > 1e-12, (np.asarray(plane.point) - origin) @ n / denom, np.inf)
        hit = (lam > 1e-9) & (lam < best)
        best = np.where(hit, lam, best)
        sid = np.where(hit, next_id, sid)
        next_id += 1
    for box in (p for p in scene.primitives if isinstance(p, Box)):
        lo, hi = np.asarray(box.lo, dtype=np.float64), np.asarray(box.hi, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / dirs
            t2 = (hi - origin) / dirs
        # rays parallel to a slab: inside -> unbounded, outside -> empty
        par = dirs == 0
        inside = (origin >= lo) & (origin <= hi)
        t1 = np.where(par, np.where(inside, -np.inf, np.inf), t1)
        t2 = np.where(par, np.where(inside, np.inf, -np.inf), t2)
        tnear = np.minimum(t1, t2)
        tfar = np.maximum(t1, t2)
        axis = np.argmax(tnear, axis=-1)
        t_in = np.max(tnear, axis=-1)
        t_out = np.min(tfar, axis=-1)
        hit = (t_in <= t_out) & (t_in > 1e-9) & (t_in < best)
        entering_dir = np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0]
        face = axis * 2 + (entering_dir < 0)
        best = np.where(hit, t_in, best)
        sid = np.where(hit, next_id + face, sid)
        next_id += 6
    pts = origin + np.where(np.isfinite(best), best, 0.0)[..., None] * dirs
    return best, sid, pts


def _surfaces(scene: SceneSpec):
    """List of (kind, primitive, face) in surface-id order."""
    out = [("plane", p, 0) for p in _scene_planes(scene)]
    for b in (p for p in scene.primitives if isinstance(p, Box)):
        out += [("box", b, f) for f in range(6)]
    return out


def _shade(scene: SceneSpec, sid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    img = np.zeros(sid.shape + (3,))
    scale = scene.texture_scale
    for i, (kind, prim, face) in enumerate(_surfaces(scene)):
        sel = sid == i
        if not sel.any():
            continue
        p = pts[sel]
        if kind == "plane":
            n = np.asarray(prim.normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            e1, e2 = _plane_basis(n)
            rel = p - np.asarray(prim.point, dtype=np.float64)
            s, t = rel @ e1, rel @ e2
        else:
            axes = [a for a in range(3) if a != face // 2]
            s, t = p[:, axes[0]], p[:, axes[1]]
        img[sel] = surface_color(s / scale, t / scale, prim.texture, scene.seed, i)
    return img


def camera_rays(pose: Pose, k: Intrinsics, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """World-frame origin and ray directions whose camera-frame z is 1."""
    u, v = pixel_grid(height, width)
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    return pose.translation, rays @ pose.rotation.T


@dataclass
class Render:
    image: np.ndarray
    depth: DepthMap
    surface_id: np.ndarray


def render(scene: SceneSpec, pose: Pose, k: Intrinsics, width: int, height: int) -> Render:
    """Render image, depth and per-pixel surface ids from a camera-to-world ``pose``."""
    if width <= 0 or height <= 0:
        raise ValueError("resolution must be positive")
    origin, dirs = camera_rays(pose, k, width, height)
    lam, sid, pts = cast_rays(scene, origin, dirs)
    hit = sid >= 0
    depth = DepthMap(np.where(hit, lam, 0.0), hit)
    return Render(_shade(scene, sid, pts), depth, sid)


def render_depth(scene: SceneSpec, pose: Pose, k: Intrinsics, width: int, height: int) -> DepthMap:
    return render(scene, pose, k, width, height).depth


def render_image(scene: SceneSpec, pose: Pose, k: Intrinsics, width: int, height: int) -> np.ndarray:
    return render(scene, pose, k, width, height).image


def make_trajectory(spec: TrajectorySpec) -> list[Pose]:
    """Camera-to-world poses for ``spec``. Frame 0 is always the identity."""
    rng = np.random.default_rng(spec.seed)
    poses = []
    for i in range(spec.k):
        if spec.kind == "static":
            poses.append(Pose.identity())
        elif spec.kind == "translate-x":
            poses.append(Pose(np.eye(3), (spec.step * i, 0.0, 0.0)))
        elif spec.kind == "translate-z":
            poses.append(Pose(np.eye(3), (0.0, 0.0, spec.step * i)))
        else:
            th = spec.step * i
            r = spec.radius
            poses.append(Pose(rotation_y(th), (r * (1 - math.cos(th)), 0.0, r * math.sin(th))))
    if spec.jitter:
        poses = [poses[0]] + [Pose(p.rotation, p.translation + rng.uniform(-spec.jitter, spec.jitter, 3))
                              for p in poses[1:]]
    return poses


# -- oracle utilities ----------------------------------------------------------

def interior_mask(surface_id: np.ndarray) -> np.ndarray:
    """Pixels whose 3x3 neighbourhood lies on one surface (1-pixel erosion of every region)."""
    hi = ndimage.maximum_filter(surface_id, size=3, mode="nearest")
    lo = ndimage.minimum_filter(surface_id, size=3, mode="nearest")
    return (hi == lo) & (surface_id >= 0)


def visibility(scene: SceneSpec, depth_t: DepthMap, pose_t: Pose, pose_s: Pose, k: Intrinsics,
               width: int, height: int, rel_tol: float = 1e-6):
    """Analytic co-visibility of target pixels in a source camera.

    Returns ``(in_view, occluded)``: ``in_view`` marks target pixels whose
    3-D point projects inside the source image in front of the camera;
    ``occluded`` marks in-view pixels whose point is hidden by a closer
    surface in the source view.
    """
    origin, dirs = camera_rays(pose_t, k, depth_t.width, depth_t.height)
    world = origin + depth_t.values.astype(np.float64)[..., None] * dirs
    in_src = pose_s.inverse().apply(world)
    uv, z, front = project_points(k, in_src)
    in_view = depth_t.valid & front & (uv[..., 0] >= -0.5) & (uv[..., 0] < width - 0.5) \
        & (uv[..., 1] >= -0.5) & (uv[..., 1] < height - 0.5)
    safe_z = np.where(front, z, 1.0)
    ray_dirs = (in_src / safe_z[..., None]) @ pose_s.rotation.T
    lam, _, _ = cast_rays(scene, pose_s.translation, ray_dirs)
    occluded = in_view & (lam < z * (1 - rel_tol))
    return in_view, occluded


def round_trip_occlusion(scene: SceneSpec, depth_t: DepthMap, depth_s: DepthMap, pose_t: Pose, pose_s: Pose,
                         k: Intrinsics) -> np.ndarray:
    """Target pixels a target -> source -> target warp cannot reconstruct.

    Those are pixels hidden in the source view plus pixels whose source
    footprint (bilinear neighbourhood, dilated by one pixel) touches a
    source pixel that is hidden in the target view.
    """
    h, w = depth_t.shape
    _, occ_t = visibility(scene, depth_t, pose_t, pose_s, k, w, h)
    _, occ_s = visibility(scene, depth_s, pose_s, pose_t, k, w, h)
    tgt_to_src = pose_s.inverse() @ pose_t
    uv, _, front = project_points(k, tgt_to_src.apply(backproject_grid(k, depth_t)))
    uv = np.where(front[..., None], uv, -1.0)
    touched = ndimage.binary_dilation(occ_s)
    hit = np.zeros((h, w), dtype=bool)
    u0 = np.floor(uv[..., 0]).astype(np.int64)
    v0 = np.floor(uv[..., 1]).astype(np.int64)
    for dv in (0, 1):
        for du in (0, 1):
            uu, vv = u0 + du, v0 + dv
            inside = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
            hit |= inside & touched[np.clip(vv, 0, h - 1), np.clip(uu, 0, w - 1)]
    return occ_t | (hit & depth_t.valid)


def surface_residual(scene: SceneSpec, points: np.ndarray) -> np.ndarray:
    """Distance from world points (N, 3) to the nearest scene surface."""
    pts = np.asarray(points, dtype=np.float64)
    best = np.full(pts.shape[:-1], np.inf)
    for plane in _scene_planes(scene):
        n = np.asarray(plane.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        best = np.minimum(best, np.abs((pts - np.asarray(plane.point)) @ n))
    for box in (p for p in scene.primitives if isinstance(p, Box)):
        lo, hi = np.asarray(box.lo, dtype=np.float64), np.asarray(box.hi, dtype=np.float64)
        outside = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        d_out = np.linalg.norm(outside, axis=-1)
        d_in = np.min(np.minimum(pts - lo, hi - pts), axis=-1)
        inside = np.all((pts >= lo) & (pts <= hi), axis=-1)
        best = np.minimum(best, np.where(inside, d_in, d_out))
    return best


def comoving_patch(images: list[np.ndarray], target_depth: DepthMap, rows: slice, cols: slice,
                   patch_depth: float, seed: int = 0):
    """Composite an object that moves with the camera into every frame.

    The patch occupies the same screen region in all ``images`` with a
    screen-space texture, so it is static in the image while the scene
    moves. Returns the composited images and the target depth with the
    patch at ``patch_depth``.
    """
    h, w = images[0].shape[:2]
    u, v = pixel_grid(h, w)
    tex = 0.5 + 0.45 * np.stack([value_noise(u / 6.0, v / 6.0, salt=seed * 3 + c + 911) for c in range(3)], axis=-1)
    out = []
    for img in images:
        img = img.copy()
        img[rows, cols] = tex[rows, cols]
        out.append(img)
    values = target_depth.values.copy()
    values[rows, cols] = patch_depth
    valid = target_depth.valid.copy()
    valid[rows, cols] = True
    return out, DepthMap(values, valid)


def perturb_depth(depth: DepthMap, amplitude: float, rng: np.random.Generator, mode: str = "frame") -> DepthMap:
    """Multiplicative noise: one factor per frame (``mode='frame'``) or per pixel."""
    if mode == "frame":
        factor = 1.0 + amplitude * rng.uniform(-1.0, 1.0)
    elif mode == "pixel":
        factor = 1.0 + amplitude * rng.uniform(-1.0, 1.0, size=depth.shape)
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return DepthMap(depth.values * factor, depth.valid)


# -- preset scenes -------------------------------------------------------------

def kitti_like_intrinsics(width: int, height: int) -> Intrinsics:
    """Normalised KITTI-style intrinsics scaled to ``width x height``."""
    return Intrinsics(0.58 * width, 1.92 * height, 0.5 * width - 0.5, 0.5 * height - 0.5)


def preset_scene(name: str, seed: int = 0) -> SceneSpec:
    if name == "plane":
        return SceneSpec([Plane((0.0, 0.0, 8.0), (0.0, 0.0, -1.0), texture=2)], background_depth=40.0, seed=seed)
    if name == "tilted":
        n = (math.sin(math.radians(30)), 0.0, -math.cos(math.radians(30)))
        return SceneSpec([Plane((0.0, 0.0, 10.0), n, texture=2)], background_depth=40.0, seed=seed)
    if name == "box":
        return SceneSpec([Box((-1.0, -1.5, 6.0), (1.0, 1.5, 8.0), texture=1)], background_depth=20.0, seed=seed)
    if name == "street":
        return SceneSpec([
            Plane((0.0, 1.6, 0.0), (0.0, -1.0, 0.0), texture=3),
            Box((-6.0, -2.0, 8.0), (-3.0, 1.6, 14.0), texture=1),
            Box((2.0, -1.0, 11.0), (4.0, 1.6, 15.0), texture=2),
            Box((-1.0, -0.5, 22.0), (1.5, 1.6, 25.0), texture=1),
        ], background_depth=45.0, seed=seed)
    raise ValueError(f"unknown scene preset {name!r}")


SCENE_PRESETS = ("plane", "tilted", "box", "street")


def synthetic_sequence(scene: SceneSpec, trajectory: TrajectorySpec, k: Intrinsics, width: int, height: int,
                       noise: float = 0.0, noise_mode: str = "frame", noise_seed: int = 0) -> list:
    """Render a trajectory into frame samples; predictions are GT depth with optional noise."""
    from .tcm import FrameSample

    rng = np.random.default_rng(noise_seed)
    frames = []
    for pose in make_trajectory(trajectory):
        r = render(scene, pose, k, width, height)
        pred = perturb_depth(r.depth, noise, rng, noise_mode) if noise else r.depth.copy()
        frames.append(FrameSample(r.image, pred, r.depth, pose, k))
    return frames
