"""Temporal consistency metric (TCM).

Predictions of ``k`` consecutive frames are brought into the reference
(middle) frame with ground-truth depth and pose. Each reference pixel
becomes a track of (prediction, ground truth) depth pairs expressed in
the reference camera. A track's deviation is its mean relative error;
the largest ``outlier_fraction`` of tracks are dropped and the remaining
per-track Abs Err, Sq Err and RMSE are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyDomainError, InvalidInputError
from .geometry import DepthMap, Intrinsics, Pose, backproject_grid, project_points, snap_to_grid


@dataclass
class FrameSample:
    image: np.ndarray
    pred_depth: DepthMap
    gt_depth: DepthMap
    gt_pose: Pose  # camera-to-world
    intrinsics: Intrinsics
    est_pose: Pose | None = None

    def __post_init__(self):
        shapes = {self.pred_depth.shape, self.gt_depth.shape, tuple(np.shape(self.image)[:2])}
        if len(shapes) != 1:
            raise InvalidInputError(f"frame grids disagree in resolution: {sorted(shapes)}")


@dataclass
class PixelTracks:
    """All tracks of one window, stored as (n_tracks, k) arrays.

    ``observed[i, f]`` says whether frame ``f`` contributes to track ``i``;
    ``pred`` and ``gt`` hold the depths expressed in the reference camera.
    """

    ref_pixels: np.ndarray  # (n, 2) of (u, v)
    pred: np.ndarray
    gt: np.ndarray
    observed: np.ndarray

    def __len__(self) -> int:
        return len(self.ref_pixels)

    def track(self, i: int) -> list[tuple[float, float]]:
        obs = self.observed[i]
        return list(zip(self.pred[i, obs].tolist(), self.gt[i, obs].tolist()))

    @classmethod
    def from_lists(cls, tracks: Sequence[Sequence[tuple[float, float]]]) -> "PixelTracks":
        """Build tracks from explicit ``[(pred, gt), ...]`` observation lists."""
        n = len(tracks)
        k = max((len(t) for t in tracks), default=0)
        pred = np.zeros((n, k))
        gt = np.ones((n, k))
        observed = np.zeros((n, k), dtype=bool)
        for i, t in enumerate(tracks):
            for j, (p, g) in enumerate(t):
                pred[i, j], gt[i, j], observed[i, j] = p, g, True
        return cls(np.zeros((n, 2)), pred, gt, observed)


@dataclass
class TcmReport:
    k: int
    abs_err: float
    sq_err: float
    rmse: float
    n_tracks: int
    outlier_fraction_applied: float
    n_windows: int = 1
    extra: dict = field(default_factory=dict)


def median_scale(pred: DepthMap, gt: DepthMap) -> tuple[DepthMap, float]:
    """Scale ``pred`` by ``median(gt) / median(pred)`` over jointly valid pixels."""
    both = pred.valid & gt.valid
    if not both.any():
        raise EmptyDomainError("median scaling: prediction and ground truth share no valid pixel")
    ratio = float(np.median(gt.values[both].astype(np.float64)) / np.median(pred.values[both].astype(np.float64)))
    return DepthMap(pred.values.astype(np.float64) * ratio, pred.valid), ratio


@dataclass
class _Correspondence:
    """GT-only geometry linking reference pixels to one frame of the window.

    ``index``/``weight`` are the flattened bilinear neighbours and weights
    in the frame (zero-weight neighbours alias the first one), and a depth
    ``d`` sampled there has reference-camera z ``a * d + b``.
    """

    index: np.ndarray  # (4, n)
    weight: np.ndarray  # (4, n)
    ok: np.ndarray  # (n,) in front, in bounds, valid GT
    a: np.ndarray
    b: float
    gt_ref: np.ndarray


class CorrespondenceCache:
    """Reuses GT-derived correspondences across predictions of one sequence.

    Entries are keyed by the identity of the ground-truth depth maps, so
    frames that share GT objects (e.g. noisy copies of one prediction set)
    share work. The cache keeps those objects alive.
    """

    def __init__(self):
        self._store: dict = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(self, ref: FrameSample, frame: FrameSample) -> "_Correspondence":
        key = (id(ref.gt_depth), id(frame.gt_depth), id(ref.gt_pose), id(frame.gt_pose))
        hit = self._store.get(key)
        if hit is None:
            hit = (_correspond(ref, frame), ref, frame)
            self._store[key] = hit
        return hit[0]


def _correspond(ref: FrameSample, frame: FrameSample) -> _Correspondence:
    k = ref.intrinsics
    h, w = frame.gt_depth.shape
    pts_ref = backproject_grid(k, ref.gt_depth)[ref.gt_depth.valid]
    ref_to_f = frame.gt_pose.inverse() @ ref.gt_pose
    f_to_ref = ref_to_f.inverse()
    uv, _, front = project_points(k, ref_to_f.apply(pts_ref))
    uv = snap_to_grid(uv)
    u, v = uv[:, 0], uv[:, 1]
    u0, v0 = np.floor(u), np.floor(v)
    fu, fv = u - u0, v - v0
    u1 = np.where(fu > 0, u0 + 1, u0)
    v1 = np.where(fv > 0, v0 + 1, v0)
    ok = front & (u0 >= 0) & (v0 >= 0) & (u1 <= w - 1) & (v1 <= h - 1)
    iu0, iu1 = (np.clip(x, 0, w - 1).astype(np.intp) for x in (u0, u1))
    iv0, iv1 = (np.clip(x, 0, h - 1).astype(np.intp) for x in (v0, v1))
    index = np.stack([iv0 * w + iu0, iv0 * w + iu1, iv1 * w + iu0, iv1 * w + iu1])
    weight = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv])
    # a sampled depth d lies at d * ray in the frame; its reference z is linear in d
    rays = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    a = rays @ f_to_ref.rotation[2]
    b = float(f_to_ref.translation[2])
    g, g_ok = _sample(frame.gt_depth, index, weight)
    ok &= g_ok
    gt_ref = a * g + b
    ok &= gt_ref > 0
    return _Correspondence(index, weight, ok, a, b, np.where(ok, gt_ref, 1.0))


def _sample(depth: DepthMap, index: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals = np.asarray(depth.values, dtype=np.float64).ravel()[index]
    ok = depth.valid.reshape(-1)[index].all(axis=0)
    return (weight * vals).sum(axis=0), ok


def _columns(ref: FrameSample, frames: Sequence[FrameSample], scale_ratio: float,
             cache: CorrespondenceCache) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per frame: (pred in ref, gt in ref, observed) for every valid reference pixel."""
    cols = []
    for frame in frames:
        c = cache.get(ref, frame)
        p, p_ok = _sample(frame.pred_depth, c.index, c.weight)
        p_ref = c.a * (p * scale_ratio) + c.b
        ok = c.ok & p_ok & (p_ref > 0)
        cols.append((np.where(ok, p_ref, 0.0), np.where(ok, c.gt_ref, 1.0), ok))
    return cols


def _assemble(ref: FrameSample, cols) -> PixelTracks:
    v_idx, u_idx = np.nonzero(ref.gt_depth.valid)
    pred, gt, observed = (np.stack(x, axis=1) for x in zip(*cols))
    keep = observed.sum(axis=1) >= 2
    return PixelTracks(np.stack([u_idx, v_idx], axis=-1)[keep], pred[keep], gt[keep], observed[keep])


def _check_window(seq: Sequence[FrameSample], ref_index: int) -> None:
    if not 0 <= ref_index < len(seq):
        raise InvalidInputError(f"reference index {ref_index} outside a window of {len(seq)}")
    if len(seq) < 2:
        raise InvalidInputError("alignment needs at least two frames")
    if any(f.intrinsics != seq[ref_index].intrinsics for f in seq):
        raise InvalidInputError("all frames of a window must share intrinsics")


def align_to_reference(seq: Sequence[FrameSample], ref_index: int, scale_ratio: float | None = None,
                       cache: CorrespondenceCache | None = None) -> PixelTracks:
    """Tracks for every reference pixel with valid ground truth.

    The reference pixel is carried into each frame with GT depth and GT
    relative pose. There the frame's scaled prediction and its GT are
    sampled bilinearly, lifted back to 3-D and expressed in the reference
    camera; the z coordinates form the observation. ``scale_ratio``
    defaults to the median ratio of the reference frame and is applied to
    every frame. Tracks with fewer than two observations are dropped.
    """
    _check_window(seq, ref_index)
    ref = seq[ref_index]
    if scale_ratio is None:
        _, scale_ratio = median_scale(ref.pred_depth, ref.gt_depth)
    cache = CorrespondenceCache() if cache is None else cache
    return _assemble(ref, _columns(ref, seq, scale_ratio, cache))


def track_deviation(tracks: PixelTracks) -> tuple[np.ndarray, np.ndarray]:
    """Per-track mean relative deviation and mean squared relative deviation."""
    rel = np.where(tracks.observed, np.abs(tracks.pred - tracks.gt) / tracks.gt, 0.0)
    count = tracks.observed.sum(axis=1)
    return rel.sum(axis=1) / count, (rel**2).sum(axis=1) / count


def _aggregate(dev: np.ndarray, sq: np.ndarray, outlier_fraction: float, k: int) -> TcmReport:
    """Drop the largest ``outlier_fraction`` of track deviations and average the rest."""
    if not 0 <= outlier_fraction < 1:
        raise InvalidInputError(f"outlier_fraction must lie in [0, 1), got {outlier_fraction}")
    if len(dev) == 0:
        raise EmptyDomainError("TCM needs at least one track")
    n_drop = math.floor(round(outlier_fraction * len(dev), 9))
    n_keep = len(dev) - n_drop
    if n_keep <= 0:
        raise EmptyDomainError("no track left after outlier filtering")
    keep = np.argsort(dev, kind="stable")[:n_keep]
    return TcmReport(
        k=k,
        abs_err=float(dev[keep].mean()),
        sq_err=float(sq[keep].mean()),
        rmse=float(np.sqrt(sq[keep]).mean()),
        n_tracks=int(n_keep),
        outlier_fraction_applied=n_drop / len(dev),
    )


def tcm(tracks: PixelTracks, outlier_fraction: float = 0.2, k: int | None = None) -> TcmReport:
    """Aggregate tracks into Abs Err / Sq Err / RMSE after dropping the worst tracks."""
    if len(tracks) == 0:
        raise EmptyDomainError("TCM needs at least one track")
    dev, sq = track_deviation(tracks)
    return _aggregate(dev, sq, outlier_fraction, tracks.observed.shape[1] if k is None else k)


def _average(k: int, reports: list[TcmReport]) -> TcmReport:
    if not reports:
        raise EmptyDomainError(f"no window of {k} frames produced any track")
    return TcmReport(
        k=k,
        abs_err=float(np.mean([r.abs_err for r in reports])),
        sq_err=float(np.mean([r.sq_err for r in reports])),
        rmse=float(np.mean([r.rmse for r in reports])),
        n_tracks=int(sum(r.n_tracks for r in reports)),
        outlier_fraction_applied=float(np.mean([r.outlier_fraction_applied for r in reports])),
        n_windows=len(reports),
    )


def tcm_sweep(frames: Sequence[FrameSample], ks: Sequence[int] = (3, 5, 7), outlier_fraction: float = 0.2,
              stride: int = 1, cache: CorrespondenceCache | None = None) -> dict[int, TcmReport]:
    """:func:`tcm_sequence` for several window sizes at once.

    Windows of different sizes that share a reference frame reuse the same
    sampled observations, so each (reference, frame) pair is sampled once.
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 2:
        raise InvalidInputError("every k must be at least 2")
    if stride < 1:
        raise InvalidInputError("stride must be at least 1")
    if len(frames) < ks[-1]:
        raise InvalidInputError(f"sequence of {len(frames)} frames is shorter than k={ks[-1]}")
    if not 0 <= outlier_fraction < 1:
        raise InvalidInputError(f"outlier_fraction must lie in [0, 1), got {outlier_fraction}")
    if any(f.intrinsics != frames[0].intrinsics for f in frames):
        raise InvalidInputError("all frames of a sequence must share intrinsics")
    cache = CorrespondenceCache() if cache is None else cache

    # windows[r] lists (k, first, last) of every window whose reference is frame r
    windows: dict[int, list] = {}
    for k in ks:
        for start in range(0, len(frames) - k + 1, stride):
            windows.setdefault(start + k // 2, []).append((k, start, start + k - 1))
    reports: dict[int, list] = {k: [] for k in ks}
    for r in sorted(windows):
        ref = frames[r]
        lo = min(w[1] for w in windows[r])
        hi = max(w[2] for w in windows[r])
        _, ratio = median_scale(ref.pred_depth, ref.gt_depth)
        # per-track running sums over frames, so windows never materialise tracks
        rel1, rel2, obs = [], [], []
        for pred, gt, ok in _columns(ref, frames[lo:hi + 1], ratio, cache):
            rel = np.where(ok, np.abs(pred - gt) / gt, 0.0)
            rel1.append(rel)
            rel2.append(rel * rel)
            obs.append(ok.astype(np.int64))
        for k, first, last in windows[r]:
            sl = slice(first - lo, last - lo + 1)
            count = np.sum(obs[sl], axis=0)
            tracked = count >= 2
            if tracked.any():
                n = count[tracked]
                dev = np.sum(rel1[sl], axis=0)[tracked] / n
                sq = np.sum(rel2[sl], axis=0)[tracked] / n
                reports[k].append(_aggregate(dev, sq, outlier_fraction, k))
    return {k: _average(k, reports[k]) for k in ks}


def tcm_sequence(frames: Sequence[FrameSample], k: int = 3, outlier_fraction: float = 0.2,
                 stride: int = 1, cache: CorrespondenceCache | None = None) -> TcmReport:
    """Slide windows of ``k`` frames (reference in the middle) and average their reports.

    Pass one ``cache`` to several calls over the same GT to share the
    correspondence geometry.
    """
    return tcm_sweep(frames, (k,), outlier_fraction, stride, cache)[k]
