"""File formats and sequence loading.

Formats
-------
* Depth: PFM (``Pf``, float32, lossless; non-positive or NaN entries are
  invalid) or 16-bit PNG holding ``depth * divisor`` (0 = invalid).
* Images: 8-bit PNG/JPEG or PFM (``PF`` for colour, ``Pf`` for grey).
* Poses: text, one camera-to-world pose per line, 12 reals = row-major
  ``[R | t]``.
* Intrinsics: text, ``fx fy cx cy``.
* Manifest: versioned line-oriented text, paths relative to its directory::

      tcdepth-manifest 1
      resolution <width> <height>
      intrinsics <path>
      poses <path>
      est_poses <path>                      (optional)
      frame <index> <image> <pred_depth> <gt_depth> <pose_line>
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import FormatError, LoadError
from .geometry import DepthMap, Intrinsics, Pose, is_rotation
from .tcm import FrameSample

MANIFEST_MAGIC = "tcdepth-manifest"
MANIFEST_VERSION = 1


class EmptySequenceError(LoadError):
    """A manifest lists no frames."""


# -- PFM --------------------------------------------------------------------------

def write_pfm(path, data) -> None:
    """Write a grid as little-endian PFM; a :class:`DepthMap` writes invalid pixels as 0."""
    if isinstance(data, DepthMap):
        arr = np.where(data.valid, data.values, 0.0)
    else:
        arr = np.asarray(data)
    arr = arr.astype("<f4")
    if arr.ndim == 2:
        ident = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        ident = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) grids, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(ident + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def _header_tokens(raw: bytes, path, count: int = 4):
    """Split the first ``count`` whitespace-separated header tokens.

    Returns ``[(token, offset), ...]`` and the payload offset (one
    whitespace byte after the last token).
    """
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header", path, start)
        tokens.append((raw[start:pos], start))
    if pos >= len(raw):
        raise FormatError("header not terminated", path, pos)
    return tokens, pos + 1


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array, (H, W) for ``Pf`` or (H, W, 3) for ``PF``."""
    raw = Path(path).read_bytes()
    tokens, offset = _header_tokens(raw, path)
    (ident, o0), (w_tok, o1), (h_tok, o2), (s_tok, o3) = tokens
    if ident not in (b"Pf", b"PF"):
        raise FormatError(f"not a PFM identifier: {ident[:8]!r}", path, o0)
    try:
        width, height = int(w_tok), int(h_tok)
    except ValueError:
        raise FormatError("dimensions must be integers", path, o1) from None
    if width <= 0 or height <= 0:
        raise FormatError(f"non-positive dimensions {width}x{height}", path, o1)
    try:
        scale = float(s_tok)
    except ValueError:
        raise FormatError("scale must be a real number", path, o3) from None
    if scale == 0 or not math.isfinite(scale):
        raise FormatError("scale must be finite and non-zero", path, o3)
    channels = 3 if ident == b"PF" else 1
    expected = width * height * channels * 4
    payload = raw[offset:]
    if len(payload) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {len(payload)}",
                          path, offset + len(payload))
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} trailing bytes after payload", path, offset + expected)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dtype).reshape((height, width, channels) if channels == 3 else (height, width))
    return arr[::-1].astype(np.float32)


def read_depth_pfm(path) -> DepthMap:
    """Read a single-channel PFM depth map; ``PF`` files are rejected."""
    raw = Path(path).read_bytes()[:2]
    if raw == b"PF":
        raise FormatError("3-channel PFM (PF) cannot hold a depth map", path, 0)
    return DepthMap(read_pfm(path))


# -- PNG ----------------------------------------------------------------------------

def read_depth_png16(path, scale_divisor: float = 256.0) -> DepthMap:
    """Depth from a single-channel 16-bit PNG: ``raw / scale_divisor`` meters, 0 invalid."""
    try:
        with Image.open(path) as img:
            mode, fmt = img.mode, img.format
            raw = np.array(img)
    except OSError as exc:
        raise FormatError(f"unreadable image: {exc}", path) from None
    if fmt != "PNG" or not mode.startswith("I;16"):
        raise FormatError(f"expected a single-channel 16-bit PNG, got {fmt} mode {mode}", path, 0)
    raw = raw.astype(np.uint16)
    return DepthMap(np.where(raw > 0, raw / float(scale_divisor), 0.0), raw > 0)


def write_depth_png16(path, depth: DepthMap, scale_divisor: float = 256.0) -> None:
    raw = np.where(depth.valid, np.round(depth.values.astype(np.float64) * scale_divisor), 0)
    if raw.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range for this divisor")
    Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")


def read_image(path) -> np.ndarray:
    """RGB image in [0, 1] as float32 (H, W, 3)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        arr = read_pfm(path)
        return arr if arr.ndim == 3 else np.repeat(arr[..., None], 3, axis=-1)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise FormatError(f"unreadable image: {exc}", path) from None


def write_image(path, image) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)


def read_depth(path, png_divisor: float = 256.0) -> DepthMap:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_depth_pfm(path)
    if path.suffix.lower() == ".png":
        return read_depth_png16(path, png_divisor)
    raise FormatError(f"unsupported depth format {path.suffix!r}", path)


# -- text formats ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def read_poses(path) -> list[Pose]:
    """Parse KITTI-style camera-to-world poses, one ``[R | t]`` per line."""
    poses = []
    lines = Path(path).read_text().splitlines()
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if len(tokens) != 12:
            raise FormatError(f"expected 12 values, found {len(tokens)}", path, lineno, unit="line")
        try:
            m = np.array([float(t) for t in tokens]).reshape(3, 4)
        except ValueError:
            raise FormatError("non-numeric token", path, lineno, unit="line") from None
        if not np.all(np.isfinite(m)):
            raise FormatError("non-finite value", path, lineno, unit="line")
        r = m[:, :3]
        if not is_rotation(r, tol=1e-3):
            raise FormatError("rotation block is not orthonormal", path, lineno, unit="line")
        if not is_rotation(r):
            u, _, vt = np.linalg.svd(r)
            r = u @ vt
        poses.append(Pose(r, m[:, 3]))
    return poses


def write_poses(path, poses: Sequence[Pose]) -> None:
    with open(path, "w") as fh:
        for p in poses:
            fh.write(" ".join(_fmt(x) for x in p.matrix[:3].ravel()) + "\n")


def read_intrinsics(path) -> Intrinsics:
    tokens = Path(path).read_text().split()
    if len(tokens) != 4:
        raise FormatError(f"expected 'fx fy cx cy', found {len(tokens)} values", path, 1, unit="line")
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise FormatError("non-numeric intrinsics", path, 1, unit="line") from None
    try:
        return Intrinsics(*values)
    except ValueError as exc:
        raise FormatError(str(exc), path, 1, unit="line") from None


def write_intrinsics(path, k: Intrinsics) -> None:
    Path(path).write_text(" ".join(_fmt(x) for x in (k.fx, k.fy, k.cx, k.cy)) + "\n")


# -- manifest -------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    index: int
    image: str
    pred_depth: str
    gt_depth: str
    pose_line: int


@dataclass
class SequenceManifest:
    width: int
    height: int
    intrinsics: str
    poses: str
    frames: list[FrameRecord] = field(default_factory=list)
    est_poses: str | None = None
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, rel: str) -> Path:
        return self.root / rel


_SAFE_PATH = re.compile(r"^\S+$")


def read_manifest(path) -> SequenceManifest:
    """Parse and syntax-check a manifest (files are not touched)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FormatError("empty manifest file", path, 1, unit="line")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MANIFEST_MAGIC:
        raise FormatError(f"first line must be '{MANIFEST_MAGIC} <version>'", path, 1, unit="line")
    if head[1] != str(MANIFEST_VERSION):
        raise FormatError(f"unsupported manifest version {head[1]!r}", path, 1, unit="line")
    fields: dict = {}
    frames: list[FrameRecord] = []
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        key, args = tokens[0], tokens[1:]
        try:
            if key == "resolution":
                if len(args) != 2:
                    raise ValueError("resolution takes <width> <height>")
                w, h = int(args[0]), int(args[1])
                if w <= 0 or h <= 0:
                    raise ValueError("resolution must be positive")
                fields["resolution"] = (w, h)
            elif key in ("intrinsics", "poses", "est_poses"):
                if len(args) != 1:
                    raise ValueError(f"{key} takes one path")
                if key in fields:
                    raise ValueError(f"duplicate {key} entry")
                fields[key] = args[0]
            elif key == "frame":
                if len(args) != 5:
                    raise ValueError("frame takes <index> <image> <pred_depth> <gt_depth> <pose_line>")
                rec = FrameRecord(int(args[0]), args[1], args[2], args[3], int(args[4]))
                if rec.pose_line < 0:
                    raise ValueError("pose_line must be non-negative")
                if frames and rec.index <= frames[-1].index:
                    raise ValueError(f"frame index {rec.index} does not increase")
                frames.append(rec)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno, unit="line") from None
    for required in ("resolution", "intrinsics", "poses"):
        if required not in fields:
            raise FormatError(f"missing '{required}' entry", path, None)
    w, h = fields["resolution"]
    return SequenceManifest(w, h, fields["intrinsics"], fields["poses"], frames,
                            fields.get("est_poses"), MANIFEST_VERSION, path.parent)


def write_manifest(path, manifest: SequenceManifest) -> None:
    out = [f"{MANIFEST_MAGIC} {manifest.version}",
           f"resolution {manifest.width} {manifest.height}",
           f"intrinsics {manifest.intrinsics}",
           f"poses {manifest.poses}"]
    if manifest.est_poses is not None:
        out.append(f"est_poses {manifest.est_poses}")
    for f in manifest.frames:
        for p in (f.image, f.pred_depth, f.gt_depth):
            if not _SAFE_PATH.match(p):
                raise ValueError(f"manifest paths may not contain whitespace: {p!r}")
        out.append(f"frame {f.index} {f.image} {f.pred_depth} {f.gt_depth} {f.pose_line}")
    Path(path).write_text("\n".join(out) + "\n")


@dataclass
class FrameSequence:
    frames: list[FrameSample]
    manifest: SequenceManifest | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self) -> Iterator[FrameSample]:
        return iter(self.frames)


def load_manifest(path, png_divisor: float = 256.0) -> FrameSequence:
    """Load and validate every file a manifest references."""
    manifest = read_manifest(path)
    if not manifest.frames:
        raise EmptySequenceError(f"{path}: manifest lists no frames")

    def need(rel: str, what: str) -> Path:
        p = manifest.resolve(rel)
        if not p.is_file():
            raise LoadError(f"{path}: {what} file not found: {p}")
        return p

    k = read_intrinsics(need(manifest.intrinsics, "intrinsics"))
    poses = read_poses(need(manifest.poses, "poses"))
    est = read_poses(need(manifest.est_poses, "est_poses")) if manifest.est_poses else None
    frames = []
    for rec in manifest.frames:
        label = f"frame {rec.index}"
        image = read_image(need(rec.image, f"{label} image"))
        pred = read_depth(need(rec.pred_depth, f"{label} predicted depth"), png_divisor)
        gt = read_depth(need(rec.gt_depth, f"{label} ground-truth depth"), png_divisor)
        for name, shape in (("image", image.shape[:2]), ("predicted depth", pred.shape), ("ground-truth depth", gt.shape)):
            if shape != (manifest.height, manifest.width):
                raise LoadError(f"{path}: {label} {name} is {shape[1]}x{shape[0]}, "
                                f"manifest says {manifest.width}x{manifest.height}")
        if rec.pose_line >= len(poses):
            raise LoadError(f"{path}: {label} refers to pose line {rec.pose_line}, file has {len(poses)}")
        if est is not None and rec.pose_line >= len(est):
            raise LoadError(f"{path}: {label} refers to est pose line {rec.pose_line}, file has {len(est)}")
        frames.append(FrameSample(image, pred, gt, poses[rec.pose_line], k,
                                  est[rec.pose_line] if est is not None else None))
    return FrameSequence(frames, manifest)


def write_sequence(directory, frames: Sequence[FrameSample], image_ext: str = ".png") -> Path:
    """Write frames plus poses, intrinsics and manifest; returns the manifest path."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if not frames:
        raise ValueError("cannot write an empty sequence")
    k = frames[0].intrinsics
    records = []
    for i, f in enumerate(frames):
        img_name, pred_name, gt_name = f"image_{i:04d}{image_ext}", f"pred_{i:04d}.pfm", f"gt_{i:04d}.pfm"
        if image_ext == ".pfm":
            write_pfm(root / img_name, np.asarray(f.image, dtype=np.float32))
        else:
            write_image(root / img_name, f.image)
        write_pfm(root / pred_name, f.pred_depth)
        write_pfm(root / gt_name, f.gt_depth)
        records.append(FrameRecord(i, img_name, pred_name, gt_name, i))
    write_intrinsics(root / "intrinsics.txt", k)
    write_poses(root / "poses.txt", [f.gt_pose for f in frames])
    est_name = None
    if all(f.est_pose is not None for f in frames):
        est_name = "est_poses.txt"
        write_poses(root / est_name, [f.est_pose for f in frames])
    h, w = frames[0].pred_depth.shape
    manifest = SequenceManifest(w, h, "intrinsics.txt", "poses.txt", records, est_name, root=root)
    write_manifest(root / "manifest.txt", manifest)
    return root / "manifest.txt"
