"""Spatial and temporal attention over bottleneck feature maps.

Feature maps are ``(H, W, D)`` arrays; attention matrices index positions
in row-major order, so query ``i`` is pixel ``(i // W, i % W)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.special import softmax

from .errors import InvalidInputError
from .geometry import DepthMap, Intrinsics, backproject_grid, pixel_grid

BOTTLENECK_SHAPE = (24, 80)


@dataclass(frozen=True)
class SpatialAttentionConfig:
    sigma: float = 1.0
    radius: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if self.radius is not None and not self.radius > 0:
            raise InvalidInputError(f"radius must be positive when set, got {self.radius}")


@dataclass
class AttentionMatrix:
    weights: np.ndarray
    kind: str  # "spatial" or "temporal"
    query_shape: tuple[int, int]

    @property
    def n_query(self) -> int:
        return self.weights.shape[0]

    @property
    def n_key(self) -> int:
        return self.weights.shape[1]

    def row(self, u: int, v: int) -> np.ndarray:
        """Weights of query pixel ``(u, v)`` over all key positions."""
        return self.weights[v * self.query_shape[1] + u]


def _check_features(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 2:
        f = f[..., None]
    if f.ndim != 3 or f.shape[-1] < 1:
        raise InvalidInputError(f"feature map must be (H, W, D), got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise InvalidInputError("feature map contains non-finite values")
    return f


def spatial_attention(coarse_depth: DepthMap, k: Intrinsics,
                      cfg: SpatialAttentionConfig = SpatialAttentionConfig()) -> AttentionMatrix:
    """``exp(-|P_i - P_j| / sigma)`` between the back-projected pixels of one frame.

    With ``cfg.radius`` set, pairs further apart than ``radius`` pixels get 0.
    """
    if not isinstance(coarse_depth, DepthMap):
        coarse_depth = DepthMap(coarse_depth)
    if not coarse_depth.valid.all():
        raise InvalidInputError("spatial attention needs a dense coarse depth map")
    pts = backproject_grid(k, coarse_depth).reshape(-1, 3)
    # pdist evaluates each unordered pair once: exact symmetry and zero diagonal
    dist = squareform(pdist(pts))
    weights = np.exp(-dist / cfg.sigma)
    if cfg.radius is not None:
        u, v = pixel_grid(*coarse_depth.shape)
        pix = np.stack([u.ravel(), v.ravel()], axis=-1)
        weights[squareform(pdist(pix)) > cfg.radius] = 0.0
    return AttentionMatrix(weights, "spatial", coarse_depth.shape)


def temporal_attention(query, keys: Sequence) -> AttentionMatrix:
    """Softmax over all key positions (concatenated across frames) of feature dot products."""
    q = _check_features(query)
    if len(keys) == 0:
        raise InvalidInputError("temporal attention needs at least one key frame")
    ks = [_check_features(kf) for kf in keys]
    if any(kf.shape[-1] != q.shape[-1] for kf in ks):
        raise InvalidInputError("query and key feature dimensions differ")
    kmat = np.concatenate([kf.reshape(-1, kf.shape[-1]) for kf in ks])
    logits = q.reshape(-1, q.shape[-1]) @ kmat.T
    return AttentionMatrix(softmax(logits, axis=1), "temporal", q.shape[:2])


def _stack_values(values) -> np.ndarray:
    if isinstance(values, (list, tuple)):
        vs = [_check_features(v) for v in values]
        if len({v.shape[-1] for v in vs}) != 1:
            raise InvalidInputError("value maps differ in feature dimension")
        return np.concatenate([v.reshape(-1, v.shape[-1]) for v in vs])
    v = _check_features(values)
    return v.reshape(-1, v.shape[-1])


def apply_attention(a: AttentionMatrix, values) -> np.ndarray:
    """Aggregate ``values`` (one map or a list of maps) with attention ``a``.

    Spatial weights are normalised by their row sums first; temporal rows
    already sum to one. Returns a feature map with the query's layout.
    """
    v = _stack_values(values)
    if v.shape[0] != a.n_key:
        raise InvalidInputError(f"attention has {a.n_key} keys but values hold {v.shape[0]} positions")
    w = a.weights
    if a.kind == "spatial":
        w = w / w.sum(axis=1, keepdims=True)
    out = w @ v
    return out.reshape(a.query_shape + (v.shape[1],))


def spatial_temporal_aggregate(features: Sequence, coarse_depths: Sequence[DepthMap], k: Intrinsics,
                               cfg: SpatialAttentionConfig = SpatialAttentionConfig()) -> list[np.ndarray]:
    """Spatial attention per frame, then temporal attention across frames, added residually.

    Each frame in turn is the query; the other frames' spatially aggregated
    features are keys and values.
    """
    if len(features) != len(coarse_depths) or len(features) < 2:
        raise InvalidInputError("need matching feature and depth lists with at least two frames")
    feats = [_check_features(f) for f in features]
    if len({f.shape for f in feats}) != 1:
        raise InvalidInputError("all feature maps must share resolution and dimension")
    spatial = [apply_attention(spatial_attention(d, k, cfg), f) for f, d in zip(feats, coarse_depths)]
    out = []
    for q in range(len(feats)):
        others = [spatial[o] for o in range(len(feats)) if o != q]
        a = temporal_attention(spatial[q], others)
        out.append(feats[q] + apply_attention(a, others))
    return out


def downsample_mean(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Block-average a grid whose size is an integer multiple of ``shape``."""
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape[:2]
    fh, fw = h // shape[0], w // shape[1]
    if fh * shape[0] != h or fw * shape[1] != w:
        raise InvalidInputError(f"cannot block-average {h}x{w} down to {shape[0]}x{shape[1]}")
    return g.reshape(shape[0], fh, shape[1], fw, *g.shape[2:]).mean(axis=(1, 3))
