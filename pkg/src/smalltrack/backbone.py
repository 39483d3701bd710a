"""Shared point encoder and template-to-search relation fusion.

The encoder is deliberately compact: a per-point MLP followed by two
farthest-point-sampling stages, each aggregating k-nearest-neighbor features
by channel-wise max and mixing in the center coordinates. Template and
search share one parameter set. Fusion embeds template features into search
features with a single cross-attention block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, concat, gather_rows, reduce_max, relu
from .geometry import farthest_point_sample
from .nn import AttentionBlock, Linear, Module

__all__ = ["BackboneConfig", "PointEncoder", "RelationFuse", "knn_indices"]


@dataclass(frozen=True)
class BackboneConfig:
    feature_dim: int = 32
    heads: int = 4
    fps_targets: tuple[int, int] = (256, 128)           # search branch
    template_fps_targets: tuple[int, int] = (128, 64)   # template branch
    neighbor_k: int = 8

    def __post_init__(self):
        if self.feature_dim % self.heads != 0:
            raise ValueError("feature_dim must be divisible by the head count")
        for targets in (self.fps_targets, self.template_fps_targets):
            if any(a <= b for a, b in zip(targets, targets[1:])):
                raise ValueError(f"fps targets must be strictly decreasing, got {targets}")


def knn_indices(points: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """Deterministic k-nearest-neighbor row indices, [num_centers, k].

    Neighbor order within the k set is unspecified (the consumer max-pools).
    """
    d2 = np.sum((centers[:, None, :] - points[None, :, :]) ** 2, axis=2)
    if k >= d2.shape[1]:
        return np.argsort(d2, axis=1, kind="stable")
    return np.argpartition(d2, k - 1, axis=1)[:, :k]


class PointEncoder(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        c = cfg.feature_dim
        self.cfg = cfg
        self.embed1 = Linear(3, c, rng, dtype)
        self.embed2 = Linear(c, c, rng, dtype)
        self.stage_mix = [Linear(c + 3, c, rng, dtype) for _ in range(len(cfg.fps_targets))]

    def point_embed(self, points) -> Tensor:
        """Per-point features before any downsampling; permutation-equivariant."""
        x = as_tensor(np.asarray(points.data if isinstance(points, Tensor) else points))
        return relu(self.embed2(relu(self.embed1(x))))

    def encode(self, points, fps_targets=None) -> tuple[Tensor, np.ndarray]:
        """Features and coordinates after the FPS/kNN stages.

        Accepts an [N,3] array or Tensor; returns ([n_last, C] features,
        [n_last, 3] coordinates).
        """
        pts_t = as_tensor(points)
        coords = np.asarray(pts_t.data, dtype=np.float64)
        targets = tuple(fps_targets) if fps_targets is not None else self.cfg.fps_targets
        if coords.shape[0] < targets[-1]:
            raise ValueError(f"need at least {targets[-1]} points, got {coords.shape[0]}")
        feats = relu(self.embed2(relu(self.embed1(pts_t))))
        pos = pts_t
        for target, mix in zip(targets, self.stage_mix):
            sel = farthest_point_sample(coords, target)
            nbr = knn_indices(coords, coords[sel], min(self.cfg.neighbor_k, coords.shape[0]))
            pooled = reduce_max(gather_rows(feats, nbr), axis=1)   # [target, C]
            centers = gather_rows(pos, sel)
            feats = relu(mix(concat([pooled, centers], axis=1)))
            coords = coords[sel]
            pos = centers
        return feats, coords


class RelationFuse(Module):
    """Cross-attention fusion: queries are search tokens, keys/values template."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float32):
        self.block = AttentionBlock(cfg.feature_dim, cfg.heads, rng, dtype)

    def __call__(self, search_feats: Tensor, template_feats: Tensor) -> Tensor:
        if search_feats.shape[1] != template_feats.shape[1]:
            raise ValueError(
                f"feature dims differ: {search_feats.shape[1]} vs {template_feats.shape[1]}")
        return self.block(search_feats, context=template_feats)
