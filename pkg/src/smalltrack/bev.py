"""Bird's-eye-view detection head with grid subdivision.

Point features are max-pooled into an H x W grid (rows index x, columns y),
optionally refined by a per-pixel transformer layer, lifted to 128 channels,
rearranged to double resolution by pixel shuffle, and decoded by a small
convolutional trunk into heat/offset/z maps. Targets and box decoding use
the output grid whose cell size is voxel_size / upscale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor, conv2d, pixel_shuffle, relu, reshape, segment_max, sigmoid,
)
from .geometry import Box3D
from .nn import Linear, AttentionBlock, Module, glorot_uniform

__all__ = ["BevConfig", "PredictionMaps", "BevTargets", "voxelize_bev",
           "VitLayer", "BevHead", "build_targets", "decode_box", "RegionError"]


class RegionError(ValueError):
    """Target center fell outside the configured BEV region."""


@dataclass(frozen=True)
class BevConfig:
    voxel_size: float = 0.2
    extents: tuple[float, float, float, float] = (-2.4, 2.4, -2.4, 2.4)  # xmin,xmax,ymin,ymax
    upscale: int = 2  # 1 only for the no-shuffle ablation

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.extents
        if xmax <= xmin or ymax <= ymin or self.voxel_size <= 0:
            raise ValueError("degenerate BEV region")
        if self.upscale not in (1, 2):
            raise ValueError("upscale must be 1 or 2")
        for span in (xmax - xmin, ymax - ymin):
            cells = span / self.voxel_size
            if abs(cells - round(cells)) > 1e-6:
                raise ValueError(f"extent {span} not divisible into {self.voxel_size} cells")

    @property
    def grid_shape(self) -> tuple[int, int]:
        xmin, xmax, ymin, ymax = self.extents
        return (int(round((xmax - xmin) / self.voxel_size)),
                int(round((ymax - ymin) / self.voxel_size)))

    @property
    def out_shape(self) -> tuple[int, int]:
        h, w = self.grid_shape
        return h * self.upscale, w * self.upscale

    @property
    def out_cell(self) -> float:
        return self.voxel_size / self.upscale


@dataclass
class PredictionMaps:
    heat: Tensor    # [h, w, 1], sigmoid range
    offset: Tensor  # [h, w, 3] = (di, dj, theta)
    zmap: Tensor    # [h, w, 1]


@dataclass
class BevTargets:
    heat: np.ndarray          # [h, w]
    center_cell: tuple[int, int]
    offset: np.ndarray        # (di, dj, theta) at the center cell
    z: float


def voxelize_bev(coords: np.ndarray, feats: Tensor, cfg: BevConfig) -> Tensor:
    """Channel-wise max over the points of each cell; empty cells stay zero.

    Points outside the region are dropped. z is collapsed entirely.
    """
    coords = np.asarray(coords).reshape(-1, 3)
    if coords.shape[0] != feats.shape[0]:
        raise ValueError(f"{coords.shape[0]} coords for {feats.shape[0]} feature rows")
    h, w = cfg.grid_shape
    xmin, _, ymin, _ = cfg.extents
    i = np.floor((coords[:, 0] - xmin) / cfg.voxel_size).astype(np.int64)
    j = np.floor((coords[:, 1] - ymin) / cfg.voxel_size).astype(np.int64)
    keep = (i >= 0) & (i < h) & (j >= 0) & (j < w)
    ids = np.where(keep, i * w + j, h * w)  # out-of-region points into a spill cell
    pooled = segment_max(feats, ids, h * w + 1)
    return reshape(pooled[:h * w], (h, w, feats.shape[1]))


class VitLayer(Module):
    """One token per BEV pixel: learned position embedding, transformer
    encoder blocks, then projection to the lift width."""

    def __init__(self, grid_shape: tuple[int, int], channels: int, out_channels: int,
                 heads: int, depth: int, rng: np.random.Generator, dtype=np.float32):
        h, w = grid_shape
        self.grid_shape = grid_shape
        self.pos = Tensor(glorot_uniform(rng, (h * w, channels), h * w, channels, dtype),
                          requires_grad=True)
        self.blocks = [AttentionBlock(channels, heads, rng, dtype) for _ in range(depth)]
        self.proj = Linear(channels, out_channels, rng, dtype)

    def __call__(self, grid: Tensor) -> Tensor:
        h, w, c = grid.shape
        if (h, w) != self.grid_shape:
            raise ValueError(f"grid {h}x{w} does not match layer built for {self.grid_shape}")
        tokens = reshape(grid, (h * w, c)) + self.pos
        for block in self.blocks:
            tokens = block(tokens)
        return reshape(self.proj(tokens), (h, w, self.proj.w.shape[1]))


class Conv(Module):
    def __init__(self, k: int, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        fan = k * k * c_in
        self.kernels = Tensor(glorot_uniform(rng, (k, k, c_in, c_out), fan, c_out, dtype),
                              requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernels) + self.bias


class BevHead(Module):
    """vit -> (lift) -> pixel shuffle -> conv trunk -> heat/offset/z heads."""

    def __init__(self, cfg: BevConfig, channels: int, rng: np.random.Generator,
                 use_vit: bool = True, use_shuffle: bool = True,
                 vit_heads: int = 4, vit_depth: int = 2,
                 lift_channels: int = 128, trunk_channels: int = 32, dtype=np.float32):
        if use_shuffle != (cfg.upscale == 2):
            raise ValueError("cfg.upscale must be 2 exactly when the shuffle stage is enabled")
        self.cfg = cfg
        self.use_vit = use_vit
        self.use_shuffle = use_shuffle
        self.vit = None
        self.lift = None
        if use_vit:
            self.vit = VitLayer(cfg.grid_shape, channels, lift_channels,
                                vit_heads, vit_depth, rng, dtype)
            trunk_in = lift_channels // 4 if use_shuffle else lift_channels
        elif use_shuffle:
            self.lift = Conv(1, channels, lift_channels, rng, dtype)
            trunk_in = lift_channels // 4
        else:
            trunk_in = channels
        self.trunk1 = Conv(3, trunk_in, trunk_channels, rng, dtype)
        self.trunk2 = Conv(3, trunk_channels, trunk_channels, rng, dtype)
        self.head_heat = Conv(1, trunk_channels, 1, rng, dtype)
        self.head_offset = Conv(1, trunk_channels, 3, rng, dtype)
        self.head_z = Conv(1, trunk_channels, 1, rng, dtype)

    def __call__(self, grid: Tensor) -> PredictionMaps:
        x = grid
        if self.vit is not None:
            x = self.vit(x)
        elif self.lift is not None:
            x = self.lift(x)
        if self.use_shuffle:
            x = pixel_shuffle(x, 2)
        x = relu(self.trunk1(x))
        x = relu(self.trunk2(x))
        return PredictionMaps(heat=sigmoid(self.head_heat(x)),
                              offset=self.head_offset(x),
                              zmap=self.head_z(x))


def build_targets(gt: Box3D, cfg: BevConfig) -> BevTargets:
    """Heat target 1/(1 + grid distance to the rounded center), 1 at the
    center cell; offset (cell - continuous center, heading) and z supervised
    there only."""
    h, w = cfg.out_shape
    s = cfg.out_cell
    xmin, _, ymin, _ = cfg.extents
    cx = (gt.center[0] - xmin) / s
    cy = (gt.center[1] - ymin) / s
    ci, cj = int(np.floor(cx)), int(np.floor(cy))
    if not (0 <= ci < h and 0 <= cj < w):
        raise RegionError(f"gt center {gt.center[:2]} outside BEV region {cfg.extents}")
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dist = np.sqrt((ii - ci) ** 2 + (jj - cj) ** 2)
    heat = 1.0 / (1.0 + dist)
    heat[ci, cj] = 1.0
    offset = np.array([ci - cx, cj - cy, gt.heading])
    return BevTargets(heat=heat, center_cell=(ci, cj), offset=offset, z=float(gt.center[2]))


def decode_box(maps: PredictionMaps, cfg: BevConfig, template_size: np.ndarray) -> Box3D:
    """Invert the target construction at the heat argmax (row-major tie-break)."""
    heat = np.asarray(maps.heat.data)[:, :, 0]
    h, w = heat.shape
    flat = int(np.argmax(heat))
    i, j = divmod(flat, w)
    off = np.asarray(maps.offset.data)[i, j]
    s = cfg.out_cell
    xmin, _, ymin, _ = cfg.extents
    cx, cy = i - off[0], j - off[1]
    z = float(np.asarray(maps.zmap.data)[i, j, 0])
    return Box3D(np.array([xmin + s * cx, ymin + s * cy, z]),
                 np.asarray(template_size, dtype=np.float64), float(off[2]))
