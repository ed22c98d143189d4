"""Masks and loss terms for self-supervised depth training.

Every loss returns a :class:`LossResult` holding the per-pixel map, the
mask that was applied and the masked mean. Masks are boolean arrays and
behave as constants: nothing differentiates through their construction.
An empty effective mask yields a scalar of 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyDomainError, InvalidInputError
from .geometry import (
    DepthMap,
    Intrinsics,
    Pose,
    depth_consistency_pair,
    masked_mean,
    percentile,
    relative_pose,
    warp_backward,
)


@dataclass(frozen=True)
class PhotometricConfig:
    alpha: float = 0.85
    ssim_window: int = 3
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise InvalidInputError(f"ssim_window must be odd and >= 3, got {self.ssim_window}")


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 1e-3
    lambda_geo: float = 0.1
    lambda_m: float = 1.0

    def __post_init__(self):
        for name in ("lambda_s", "lambda_geo", "lambda_m"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise InvalidInputError(f"{name} must be finite and non-negative, got {value}")


@dataclass
class LossResult:
    scalar: float
    map: np.ndarray
    mask: np.ndarray

    @property
    def coverage(self) -> float:
        """Fraction of pixels that entered the mean."""
        return float(self.mask.mean()) if self.mask.size else 0.0


def _result(per_pixel: np.ndarray, mask: np.ndarray) -> LossResult:
    mask = np.asarray(mask, dtype=bool)
    per_pixel = np.where(mask, per_pixel, 0.0)
    return LossResult(masked_mean(per_pixel, mask), per_pixel, mask)


def _as_float(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return a[..., None] if a.ndim == 2 else a


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = _as_float(x), _as_float(y)
    if x.shape != y.shape:
        raise InvalidInputError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def _depth_values(d) -> np.ndarray:
    return (d.values if isinstance(d, DepthMap) else np.asarray(d)).astype(np.float64)


# -- photometric ---------------------------------------------------------------

def ssim(x, y, cfg: PhotometricConfig = PhotometricConfig(), valid=None) -> np.ndarray:
    """Windowed SSIM per pixel, averaged over channels.

    Window statistics use a box filter with replicate padding, so the map
    has the input's height and width. With ``valid`` the statistics of each
    window are taken over its valid pixels only (pixels whose window holds
    no valid pixel get 1).
    """
    x, y = _check_pair(x, y)
    n = cfg.ssim_window
    r = n // 2

    def box(a):
        # explicit window sum: a running-sum filter would leak rounding between windows
        h, w = a.shape[:2]
        padded = np.pad(a, ((r, r), (r, r), (0, 0)), mode="edge")
        total = np.zeros_like(a)
        for dv in range(n):
            for du in range(n):
                total += padded[dv:dv + h, du:du + w]
        return total / (n * n)

    if valid is None:
        mean = box
    else:
        w = np.asarray(valid, dtype=np.float64)[..., None]
        count = box(w)
        empty = count < 1e-12
        safe = np.where(empty, 1.0, count)

        def mean(a):
            return np.where(empty, 0.0, box(a * w) / safe)

    mu_x, mu_y = mean(x), mean(y)
    sigma_x = mean(x * x) - mu_x * mu_x
    sigma_y = mean(y * y) - mu_y * mu_y
    sigma_xy = mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + cfg.c1) * (2 * sigma_xy + cfg.c2)
    den = (mu_x * mu_x + mu_y * mu_y + cfg.c1) * (sigma_x + sigma_y + cfg.c2)
    return (num / den).mean(axis=-1)


def photometric_error(x, y, cfg: PhotometricConfig = PhotometricConfig(), valid=None) -> np.ndarray:
    """``alpha * (1 - SSIM) / 2 + (1 - alpha) * L1`` with the L1 term channel-meaned.

    ``valid`` keeps invalid pixels of a warped image out of the SSIM windows.
    """
    x, y = _check_pair(x, y)
    l1 = np.abs(x - y).mean(axis=-1)
    if cfg.alpha == 0:
        return l1
    return cfg.alpha * (1 - ssim(x, y, cfg, valid)) / 2 + (1 - cfg.alpha) * l1


# -- masks -----------------------------------------------------------------------

def cycle_mask(i_t, i_t_s_t, cfg: PhotometricConfig = PhotometricConfig(), p: float = 0.7,
               valid=None) -> np.ndarray:
    """Keep pixels whose round-trip photometric error is below its ``p`` percentile.

    ``valid`` restricts both the percentile domain and the mask to pixels
    that survived the round trip. When the threshold equals the smallest
    error the strict comparison would keep nothing; the comparison then
    becomes ``<=`` so exactly reconstructed pixels are kept.
    """
    err = photometric_error(i_t, i_t_s_t, cfg, valid)
    valid = np.ones(err.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyDomainError("cycle mask: no pixel survived the round trip")
    errors = err[valid]
    gamma = percentile(errors, p)
    if gamma <= errors.min():
        return valid & (err <= gamma)
    return valid & (err < gamma)


def min_mask(errors_per_source: Sequence[np.ndarray], valid: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Per pixel, select the source with the smallest error (ties go to the lowest index)."""
    if len(errors_per_source) < 2:
        raise InvalidInputError("min_mask needs at least two sources")
    errs = np.stack([np.asarray(e, dtype=np.float64) for e in errors_per_source])
    if valid is not None:
        ok = np.stack([np.asarray(v, dtype=bool) for v in valid])
        errs = np.where(ok, errs, np.inf)
        any_ok = ok.any(axis=0)
    else:
        any_ok = np.ones(errs.shape[1:], dtype=bool)
    best = np.argmin(errs, axis=0)
    return [(best == i) & any_ok for i in range(len(errs))]


def _min_error(i_t, images, cfg, valid=None) -> tuple[np.ndarray, np.ndarray]:
    if valid is None:
        errs = np.stack([photometric_error(i_t, img, cfg) for img in images])
    else:
        errs = np.stack([photometric_error(i_t, img, cfg, v) for img, v in zip(images, valid)])
    if valid is not None:
        ok = np.stack([np.asarray(v, dtype=bool) for v in valid])
        errs = np.where(ok, errs, np.inf)
        return errs.min(axis=0), ok.any(axis=0)
    return errs.min(axis=0), np.ones(errs.shape[1:], dtype=bool)


def auto_mask(i_t, sources: Sequence, warped: Sequence, cfg: PhotometricConfig = PhotometricConfig(),
              warped_valid: Sequence | None = None) -> np.ndarray:
    """True where the best warped source explains ``i_t`` better than the best unwarped one."""
    if len(sources) != len(warped):
        raise InvalidInputError("sources and warped lists differ in length")
    warped_err, any_ok = _min_error(i_t, warped, cfg, warped_valid)
    identity_err, _ = _min_error(i_t, sources, cfg)
    return any_ok & (warped_err < identity_err)


def motion_mask(d, d_teacher, threshold: float = 0.6) -> np.ndarray:
    """True where student and teacher agree to within the relative ``threshold``."""
    d, t = _depth_values(d), _depth_values(d_teacher)
    if d.shape != t.shape:
        raise InvalidInputError("depth maps differ in shape")
    if not (np.all(d > 0) and np.all(t > 0)):
        raise InvalidInputError("motion mask needs strictly positive depths")
    return np.maximum((d - t) / t, (t - d) / d) < threshold


# -- losses ----------------------------------------------------------------------

def motion_loss(d, d_teacher, m) -> LossResult:
    """L1 distance to the teacher on pixels the motion mask flags as moving."""
    d, t = _depth_values(d), _depth_values(d_teacher)
    moving = ~np.asarray(m, dtype=bool)
    return _result(np.abs(d - t), moving)


def photometric_loss(i_t, warped_sources: Sequence, m_motion=None, m_auto=None,
                     cfg: PhotometricConfig = PhotometricConfig(), warped_valid: Sequence | None = None) -> LossResult:
    """Pixel-wise minimum reprojection error over sources, masked.

    Invalid warp candidates are left out of the minimum; a pixel with no
    valid candidate is excluded.
    """
    err, any_ok = _min_error(i_t, warped_sources, cfg, warped_valid)
    mask = any_ok.copy()
    if m_motion is not None:
        mask &= np.asarray(m_motion, dtype=bool)
    if m_auto is not None:
        mask &= np.asarray(m_auto, dtype=bool)
    return _result(np.where(any_ok, err, 0.0), mask)


def _image_gradients(i_t) -> tuple[np.ndarray, np.ndarray]:
    img = _as_float(i_t)
    gx = np.abs(np.diff(img, axis=1)).mean(axis=-1)
    gy = np.abs(np.diff(img, axis=0)).mean(axis=-1)
    return gx, gy


def smoothness_terms(d, i_t):
    """Edge weights and forward differences of the mean-normalised inverse depth."""
    depth = _depth_values(d)
    if not np.all(depth > 0):
        raise InvalidInputError("smoothness loss needs a fully valid depth map")
    inv = 1.0 / depth
    norm = inv / inv.mean()
    gx, gy = _image_gradients(i_t)
    return np.diff(norm, axis=1), np.diff(norm, axis=0), np.exp(-gx), np.exp(-gy)


def smoothness_loss(d, i_t) -> LossResult:
    """Edge-aware smoothness of the mean-normalised inverse depth.

    The x term of pixel (r, c) uses the forward difference to (r, c + 1) and
    the y term the one to (r + 1, c); the last column/row has no term. The
    scalar is the mean over all pixels.
    """
    dx, dy, wx, wy = smoothness_terms(d, i_t)
    per_pixel = np.zeros((dy.shape[0] + 1, dx.shape[1] + 1))
    per_pixel[:, :-1] += np.abs(dx) * wx
    per_pixel[:-1, :] += np.abs(dy) * wy
    return _result(per_pixel, np.ones(per_pixel.shape, dtype=bool))


def geometric_loss(pair, m_motion=None, m_auto=None, m_cycle=None) -> LossResult:
    """``1 - min / max`` of the computed and interpolated depths, masked.

    ``pair`` is the ``(computed, interpolated, valid)`` triple from
    :func:`depth_consistency_pair`.
    """
    computed, interpolated, valid = pair
    a, b = _depth_values(computed), _depth_values(interpolated)
    mask = np.asarray(valid, dtype=bool) & (a > 0) & (b > 0)
    for m in (m_motion, m_auto, m_cycle):
        if m is not None:
            mask = mask & np.asarray(m, dtype=bool)
    safe_max = np.where(mask, np.maximum(a, b), 1.0)
    per_pixel = 1.0 - np.minimum(a, b) / safe_max
    return _result(per_pixel, mask)


def reference_loss(d_t, d_ref) -> LossResult:
    """Mean absolute difference; ``d_t`` plays the detached target."""
    a, b = _depth_values(d_t), _depth_values(d_ref)
    if a.shape != b.shape:
        raise InvalidInputError("depth maps differ in shape")
    mask = np.ones(a.shape, dtype=bool)
    if isinstance(d_t, DepthMap):
        mask &= d_t.valid
    if isinstance(d_ref, DepthMap):
        mask &= d_ref.valid
    return _result(np.abs(a - b), mask)


LOSS_NAMES = ("photo", "smooth", "geo", "motion", "ref")


def total_loss(components: Mapping[str, float | LossResult], w: LossWeights = LossWeights()) -> float:
    """``photo + lambda_s * smooth + lambda_geo * geo + lambda_m * motion + ref``."""
    unknown = set(components) - set(LOSS_NAMES)
    if unknown:
        raise InvalidInputError(f"unknown loss components: {sorted(unknown)}")

    def val(name):
        c = components.get(name, 0.0)
        return float(c.scalar if isinstance(c, LossResult) else c)

    return (val("photo") + w.lambda_s * val("smooth") + w.lambda_geo * val("geo")
            + w.lambda_m * val("motion") + val("ref"))


# -- full triplet evaluation -------------------------------------------------

@dataclass
class TripletLosses:
    results: dict
    total: float
    masks: dict


def triplet_losses(images: Sequence[np.ndarray], depths: Sequence[DepthMap], poses: Sequence[Pose],
                   k: Intrinsics, teacher: DepthMap | None = None, ref_depth: DepthMap | None = None,
                   cfg: PhotometricConfig = PhotometricConfig(), weights: LossWeights = LossWeights(),
                   cycle_p: float = 0.7, motion_threshold: float = 0.6) -> TripletLosses:
    """Evaluate every loss term on a (previous, target, next) triplet.

    ``poses`` are camera-to-world. Without a ``teacher`` the motion mask is
    all true and the motion loss is empty; without ``ref_depth`` the
    reference loss is empty.
    """
    if not (len(images) == len(depths) == len(poses) == 3):
        raise InvalidInputError("triplet_losses expects exactly three frames")
    i_t, d_t, pose_t = images[1], depths[1], poses[1]
    sources = [0, 2]
    warped, warped_valid, pairs, cycles = [], [], [], []
    for s in sources:
        t_to_s = relative_pose(pose_t, poses[s])
        w_img, w_ok = warp_backward(images[s], d_t, t_to_s, k)
        warped.append(w_img)
        warped_valid.append(w_ok)
        pairs.append(depth_consistency_pair(d_t, depths[s], t_to_s, k))
        # target -> source -> target round trip
        i_ts, ok_ts = warp_backward(i_t, depths[s], t_to_s.inverse(), k)
        i_tst, ok_tst = warp_backward(i_ts, d_t, t_to_s, k, src_valid=ok_ts)
        try:
            cycles.append(cycle_mask(i_t, i_tst, cfg, cycle_p, ok_tst))
        except EmptyDomainError:
            cycles.append(np.zeros(ok_tst.shape, dtype=bool))

    if teacher is not None:
        valid = d_t.valid & teacher.valid
        m_motion = np.zeros(d_t.shape, dtype=bool)
        m_motion[valid] = motion_mask(d_t.values[valid], teacher.values[valid], motion_threshold)
        l_motion = motion_loss(d_t, teacher, m_motion | ~valid)
    else:
        m_motion = np.ones(d_t.shape, dtype=bool)
        l_motion = _result(np.zeros(d_t.shape), np.zeros(d_t.shape, dtype=bool))
    m_auto = auto_mask(i_t, [images[s] for s in sources], warped, cfg, warped_valid)
    l_photo = photometric_loss(i_t, warped, m_motion, m_auto, cfg, warped_valid)
    l_smooth = smoothness_loss(d_t, i_t) if d_t.valid.all() else _result(np.zeros(d_t.shape), np.zeros(d_t.shape, dtype=bool))
    geos = [geometric_loss(pair, m_motion, m_auto, cyc) for pair, cyc in zip(pairs, cycles)]
    geo_mask = geos[0].mask | geos[1].mask
    geo_map = (geos[0].map + geos[1].map) / np.maximum(geos[0].mask.astype(int) + geos[1].mask, 1)
    l_geo = _result(geo_map, geo_mask)
    if ref_depth is not None:
        l_ref = reference_loss(d_t, ref_depth)
    else:
        l_ref = _result(np.zeros(d_t.shape), np.zeros(d_t.shape, dtype=bool))
    results = {"photo": l_photo, "smooth": l_smooth, "geo": l_geo, "motion": l_motion, "ref": l_ref}
    masks = {"motion": m_motion, "auto": m_auto, "cycle_prev": cycles[0], "cycle_next": cycles[1]}
    return TripletLosses(results, total_loss(results, weights), masks)
