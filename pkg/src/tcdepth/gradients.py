"""Analytic depth gradients of the loss terms and their finite-difference check.

Masks are frozen at the evaluation point. Only the dependence of each
loss on the depth map flows into the gradient; for the warping-based
losses that includes the reprojection of every target pixel and the
bilinear interpolation of the sampled source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    DepthMap,
    Intrinsics,
    Pose,
    bilinear_gradient,
    bilinear_sample,
    central_difference,
    reproject,
    rotation_x,
    rotation_y,
    rotation_z,
)
from .losses import (
    PhotometricConfig,
    geometric_loss,
    motion_loss,
    motion_mask,
    photometric_loss,
    reference_loss,
    smoothness_loss,
    smoothness_terms,
)

SUPPORTED = ("geometric", "photometric", "smoothness", "motion", "reference")
_L1_ONLY = PhotometricConfig(alpha=0.0)


def _values(d) -> np.ndarray:
    return (d.values if isinstance(d, DepthMap) else np.asarray(d)).astype(np.float64)


def _count(mask) -> int:
    return max(int(np.count_nonzero(mask)), 1)


# -- scalar evaluation with frozen masks -----------------------------------------

def loss_value(name: str, inputs: dict, depth) -> float:
    """Scalar of loss ``name`` with the differentiated depth replaced by ``depth``."""
    d = np.asarray(depth, dtype=np.float64)
    if name == "geometric":
        if "computed" in inputs:
            key = inputs.get("_wrt", "interpolated")
            a = d if key == "computed" else _values(inputs["computed"])
            b = d if key == "interpolated" else _values(inputs["interpolated"])
            return geometric_loss((a, b, inputs["mask"])).scalar
        uv, z, _ = reproject(inputs["k"], d, inputs["pose"])
        sampled, _ = bilinear_sample(_values(inputs["src_depth"]), uv)
        return geometric_loss((z, sampled, inputs["mask"])).scalar
    if name == "photometric":
        warped = []
        for src, pose in zip(inputs["sources"], inputs["poses"]):
            uv, _, _ = reproject(inputs["k"], d, pose)
            warped.append(bilinear_sample(np.asarray(src, dtype=np.float64), uv)[0])
        return photometric_loss(inputs["image"], warped, inputs["mask"], None, _L1_ONLY,
                                warped_valid=inputs["valid"]).scalar
    if name == "smoothness":
        return smoothness_loss(d, inputs["image"]).scalar
    if name == "motion":
        return motion_loss(d, inputs["teacher"], inputs["mask"]).scalar
    if name == "reference":
        return reference_loss(inputs["d_t"], d).scalar
    raise InvalidInputError(f"unsupported loss {name!r}; expected one of {SUPPORTED}")


# -- analytic gradients ------------------------------------------------------------

def _ratio_grad(a, b):
    """Partials of ``1 - min(a, b) / max(a, b)`` with respect to ``a`` and ``b``."""
    a_small = a < b
    da = np.where(a_small, -1.0 / b, b / a**2)
    db = np.where(a_small, a / b**2, -1.0 / a)
    return da, db


def loss_gradient(name: str, inputs: dict, wrt: str | None = None) -> np.ndarray:
    """Gradient of the masked scalar of loss ``name`` with respect to a depth map.

    ``inputs`` per loss (masks are boolean H x W arrays):

    * ``geometric`` -- ``tgt_depth``, ``src_depth``, ``pose`` (target to
      source), ``k``, ``mask``; differentiated w.r.t. ``tgt_depth``. With
      ``computed``/``interpolated``/``mask`` instead, ``wrt`` picks one of
      those two maps.
    * ``photometric`` (L1 part) -- ``image``, ``sources``, ``poses``,
      ``tgt_depth``, ``k``, ``mask``, ``valid`` (one mask per source).
    * ``smoothness`` -- ``depth``, ``image``.
    * ``motion`` -- ``depth``, ``teacher``, ``mask`` (the motion mask).
    * ``reference`` -- ``d_t``, ``d_ref``; differentiated w.r.t. ``d_ref``.
    """
    if name == "geometric":
        mask = np.asarray(inputs["mask"], dtype=bool)
        n = _count(mask)
        if "computed" in inputs:
            a, b = _values(inputs["computed"]), _values(inputs["interpolated"])
            da, db = _ratio_grad(a, b)
            g = da if (wrt or "interpolated") == "computed" else db
            return np.where(mask, g, 0.0) / n
        d = _values(inputs["tgt_depth"])
        src = _values(inputs["src_depth"])
        uv, z, _, duv, dz = reproject(inputs["k"], d, inputs["pose"], with_jacobian=True)
        sampled, _ = bilinear_sample(src, uv)
        gu, gv = bilinear_gradient(src, uv)
        dsampled = gu * duv[..., 0] + gv * duv[..., 1]
        safe_z = np.where(mask, z, 1.0)
        safe_s = np.where(mask, sampled, 1.0)
        da, db = _ratio_grad(safe_z, safe_s)
        return np.where(mask, da * dz + db * dsampled, 0.0) / n

    if name == "photometric":
        d = _values(inputs["tgt_depth"])
        image = np.asarray(inputs["image"], dtype=np.float64)
        if image.ndim == 2:
            image = image[..., None]
        errs, grads = [], []
        for src, pose, ok in zip(inputs["sources"], inputs["poses"], inputs["valid"]):
            src = np.asarray(src, dtype=np.float64)
            if src.ndim == 2:
                src = src[..., None]
            uv, _, _, duv, _ = reproject(inputs["k"], d, pose, with_jacobian=True)
            warped, _ = bilinear_sample(src, uv)
            gu, gv = bilinear_gradient(src, uv)
            diff = image - warped
            dwarp = gu * duv[..., 0:1] + gv * duv[..., 1:2]
            errs.append(np.where(ok, np.abs(diff).mean(axis=-1), np.inf))
            grads.append((-np.sign(diff) * dwarp).mean(axis=-1))
        errs, grads = np.stack(errs), np.stack(grads)
        best = np.argmin(errs, axis=0)
        any_ok = np.isfinite(errs.min(axis=0))
        mask = np.asarray(inputs["mask"], dtype=bool) & any_ok
        g = np.take_along_axis(grads, best[None], axis=0)[0]
        return np.where(mask, g, 0.0) / _count(mask)

    if name == "smoothness":
        d = _values(inputs["depth"])
        dx, dy, wx, wy = smoothness_terms(d, inputs["image"])
        n_pix = d.size
        # dL / d(normalised inverse depth)
        g = np.zeros_like(d)
        sx, sy = np.sign(dx) * wx, np.sign(dy) * wy
        g[:, 1:] += sx
        g[:, :-1] -= sx
        g[1:, :] += sy
        g[:-1, :] -= sy
        g /= n_pix
        inv = 1.0 / d
        m = inv.mean()
        g_inv = g / m - (g * inv).sum() / (m * m * n_pix)
        return g_inv * (-1.0 / d**2)

    if name == "motion":
        d, t = _values(inputs["depth"]), _values(inputs["teacher"])
        moving = ~np.asarray(inputs["mask"], dtype=bool)
        return np.where(moving, np.sign(d - t), 0.0) / _count(moving)

    if name == "reference":
        if wrt not in (None, "d_ref"):
            raise InvalidInputError("the reference loss only propagates into d_ref")
        a, b = _values(inputs["d_t"]), _values(inputs["d_ref"])
        mask = np.ones(a.shape, dtype=bool)
        for key in ("d_t", "d_ref"):
            if isinstance(inputs[key], DepthMap):
                mask &= inputs[key].valid
        return np.where(mask, np.sign(b - a), 0.0) / _count(mask)

    raise InvalidInputError(f"unsupported loss {name!r}; expected one of {SUPPORTED}")


_WRT_KEY = {"geometric": "tgt_depth", "photometric": "tgt_depth", "smoothness": "depth",
            "motion": "depth", "reference": "d_ref"}


# -- random well-conditioned problems ----------------------------------------------

def _small_pose(rng: np.random.Generator) -> Pose:
    r = rotation_x(rng.uniform(-0.02, 0.02)) @ rotation_y(rng.uniform(-0.02, 0.02)) @ rotation_z(rng.uniform(-0.02, 0.02))
    return Pose(r, rng.uniform(-0.3, 0.3, 3))


def _off_lattice(uv: np.ndarray, size: int, margin: float) -> np.ndarray:
    frac = uv - np.floor(uv)
    inside = np.all((uv >= 1.0) & (uv <= size - 2.0), axis=-1)
    return inside & np.all((frac > margin) & (frac < 1 - margin), axis=-1)


def make_problem(name: str, size: int = 8, seed: int = 0) -> dict:
    """Random inputs for ``name`` that stay clear of kinks.

    Pixels whose reprojection sits near a bilinear cell border, whose
    min/max or absolute-value arguments nearly tie, are redrawn; the few
    that never settle are masked out.
    """
    rng = np.random.default_rng(seed)
    shape = (size, size)
    k = Intrinsics(size, size, (size - 1) / 2, (size - 1) / 2)
    if name == "geometric":
        pose = _small_pose(rng)
        src = rng.uniform(4.0, 6.0, shape)
        d = rng.uniform(4.0, 6.0, shape)
        for _ in range(200):
            uv, z, front = reproject(k, d, pose)
            sampled, _ = bilinear_sample(src, np.clip(uv, 0, size - 1))
            good = front & _off_lattice(uv, size, 0.05) & (np.abs(z - sampled) > 0.05)
            if good.all():
                break
            d = np.where(good, d, rng.uniform(4.0, 6.0, shape))
        mask = good & (rng.uniform(size=shape) < 0.85)
        return {"tgt_depth": d, "src_depth": src, "pose": pose, "k": k, "mask": mask}
    if name == "photometric":
        image = rng.uniform(0.0, 1.0, shape + (3,))
        sources = [rng.uniform(0.0, 1.0, shape + (3,)) for _ in range(2)]
        poses = [_small_pose(rng) for _ in range(2)]
        d = rng.uniform(4.0, 6.0, shape)
        for _ in range(200):
            good = np.ones(shape, dtype=bool)
            errs = []
            for src, pose in zip(sources, poses):
                uv, _, front = reproject(k, d, pose)
                warped, _ = bilinear_sample(src, np.clip(uv, 0, size - 1))
                diff = np.abs(image - warped)
                good &= front & _off_lattice(uv, size, 0.05) & np.all(diff > 0.02, axis=-1)
                errs.append(diff.mean(axis=-1))
            good &= np.abs(errs[0] - errs[1]) > 0.02
            if good.all():
                break
            d = np.where(good, d, rng.uniform(4.0, 6.0, shape))
        valid = [good.copy(), good.copy()]
        mask = good & (rng.uniform(size=shape) < 0.85)
        return {"image": image, "sources": sources, "poses": poses, "tgt_depth": d, "k": k,
                "mask": mask, "valid": valid}
    if name == "smoothness":
        d = rng.uniform(1.0, 10.0, shape)
        for _ in range(200):
            inv = 1.0 / d
            close_x = np.abs(np.diff(inv, axis=1)) < 0.02 * inv[:, :-1]
            close_y = np.abs(np.diff(inv, axis=0)) < 0.02 * inv[:-1, :]
            redo = np.zeros(shape, dtype=bool)
            redo[:, 1:] |= close_x
            redo[1:, :] |= close_y
            if not redo.any():
                break
            d = np.where(redo, rng.uniform(1.0, 10.0, shape), d)
        return {"depth": d, "image": rng.uniform(0.0, 1.0, shape + (3,))}
    if name == "motion":
        teacher = rng.uniform(2.0, 6.0, shape)
        ratio = rng.choice([rng.uniform(0.3, 0.55), rng.uniform(0.8, 1.25), rng.uniform(1.8, 2.5)], size=shape)
        ratio = np.where(np.abs(ratio - 1) < 0.05, 1.1, ratio)
        d = teacher * ratio
        return {"depth": d, "teacher": teacher, "mask": motion_mask(d, teacher)}
    if name == "reference":
        d_t = rng.uniform(2.0, 6.0, shape)
        offset = rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], size=shape)
        return {"d_t": d_t, "d_ref": d_t + offset}
    raise InvalidInputError(f"unsupported loss {name!r}; expected one of {SUPPORTED}")


@dataclass
class GradCheckResult:
    loss: str
    size: int
    seed: int
    max_rel_err: float
    max_abs_err: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Entry-wise ``|a - n| / max(|a|, |n|, floor)``."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradient(name: str, size: int = 8, seed: int = 0, rel_step: float = 1e-3) -> GradCheckResult:
    """Compare :func:`loss_gradient` with central differences on a random problem."""
    inputs = make_problem(name, size, seed)
    key = _WRT_KEY[name]
    x0 = _values(inputs[key])
    analytic = loss_gradient(name, inputs)
    numeric = central_difference(lambda x: loss_value(name, inputs, x), x0, rel_step=rel_step)
    rel = relative_error(analytic, numeric)
    return GradCheckResult(name, size, seed, float(rel.max()), float(np.abs(analytic - numeric).max()), x0.size)
