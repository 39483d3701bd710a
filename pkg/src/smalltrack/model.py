"""Full tracker: shared encoder, relation fusion, optional prototype mining,
and the BEV grid-subdivision head."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autograd import Tensor
from .backbone import BackboneConfig, PointEncoder, RelationFuse
from .bev import BevConfig, BevHead, PredictionMaps, voxelize_bev
from .nn import Module
from .tapm import PrototypeMiner, TapmConfig, assemble_enhanced

__all__ = ["TrackerConfig", "TrackOutput", "Tracker"]


@dataclass(frozen=True)
class TrackerConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    tapm: TapmConfig = field(default_factory=TapmConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    region_z: tuple[float, float] = (-2.8, 2.8)
    use_tapm: bool = True
    use_vit: bool = True
    use_shuffle: bool = True
    vit_depth: int = 2
    lift_channels: int = 128
    trunk_channels: int = 32

    def __post_init__(self):
        if self.use_shuffle and self.lift_channels % 4 != 0:
            raise ValueError("lift_channels must be divisible by 4 for pixel shuffle")

    def with_variant(self, use_tapm: bool, use_vit: bool, use_shuffle: bool) -> "TrackerConfig":
        bev = BevConfig(self.bev.voxel_size, self.bev.extents, 2 if use_shuffle else 1)
        return TrackerConfig(backbone=self.backbone, tapm=self.tapm, bev=bev,
                             region_z=self.region_z, use_tapm=use_tapm,
                             use_vit=use_vit, use_shuffle=use_shuffle,
                             vit_depth=self.vit_depth, lift_channels=self.lift_channels,
                             trunk_channels=self.trunk_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrackerConfig":
        return TrackerConfig(
            backbone=BackboneConfig(
                feature_dim=d["backbone"]["feature_dim"],
                heads=d["backbone"]["heads"],
                fps_targets=tuple(d["backbone"]["fps_targets"]),
                template_fps_targets=tuple(d["backbone"]["template_fps_targets"]),
                neighbor_k=d["backbone"]["neighbor_k"]),
            tapm=TapmConfig(**d["tapm"]),
            bev=BevConfig(voxel_size=d["bev"]["voxel_size"],
                          extents=tuple(d["bev"]["extents"]),
                          upscale=d["bev"]["upscale"]),
            region_z=tuple(d["region_z"]),
            use_tapm=d["use_tapm"], use_vit=d["use_vit"], use_shuffle=d["use_shuffle"],
            vit_depth=d["vit_depth"], lift_channels=d["lift_channels"],
            trunk_channels=d["trunk_channels"])


@dataclass
class TrackOutput:
    maps: PredictionMaps
    prototype_coords: Tensor | None  # None when prototype mining is disabled
    mask: Tensor | None


class Tracker(Module):
    def __init__(self, cfg: TrackerConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        c = cfg.backbone.feature_dim
        self.encoder = PointEncoder(cfg.backbone, rng, dtype)
        self.fusion = RelationFuse(cfg.backbone, rng, dtype)
        self.miner = None
        if cfg.use_tapm:
            xmin, xmax, ymin, ymax = cfg.bev.extents
            bounds = (xmin, xmax, ymin, ymax, cfg.region_z[0], cfg.region_z[1])
            self.miner = PrototypeMiner(cfg.tapm, c, bounds, rng, dtype)
        self.head = BevHead(cfg.bev, c, rng,
                            use_vit=cfg.use_vit, use_shuffle=cfg.use_shuffle,
                            vit_heads=cfg.backbone.heads, vit_depth=cfg.vit_depth,
                            lift_channels=cfg.lift_channels,
                            trunk_channels=cfg.trunk_channels, dtype=dtype)

    def forward(self, search_points: np.ndarray, template_points: np.ndarray) -> TrackOutput:
        """Predict maps (and prototype coordinates) for one local-frame sample."""
        search_feats, search_coords = self.encoder.encode(
            search_points, self.cfg.backbone.fps_targets)
        template_feats, _ = self.encoder.encode(
            template_points, self.cfg.backbone.template_fps_targets)
        fused = self.fusion(search_feats, template_feats)

        mask = proto_coords = None
        if self.miner is not None:
            mask, proto_feats, proto_coords = self.miner(fused)
            coords, feats = assemble_enhanced(search_coords, fused, proto_coords, proto_feats)
        else:
            coords, feats = search_coords, fused
        grid = voxelize_bev(coords, feats, self.cfg.bev)
        return TrackOutput(maps=self.head(grid), prototype_coords=proto_coords, mask=mask)

    __call__ = forward
