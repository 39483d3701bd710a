import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smalltrack.backbone import BackboneConfig
from smalltrack.bev import BevConfig
from smalltrack.model import TrackerConfig
from smalltrack.tapm import TapmConfig


def tiny_tracker_config(use_tapm=True, use_vit=True, use_shuffle=True,
                        feature_dim=8, heads=2) -> TrackerConfig:
    """Small enough for finite-difference checks end to end."""
    return TrackerConfig(
        backbone=BackboneConfig(feature_dim=feature_dim, heads=heads,
                                fps_targets=(16, 8), template_fps_targets=(12, 6),
                                neighbor_k=4),
        tapm=TapmConfig(prototype_count=4, attention_depth=2, heads=heads),
        bev=BevConfig(voxel_size=0.8, extents=(-2.4, 2.4, -2.4, 2.4),
                      upscale=2 if use_shuffle else 1),
        region_z=(-2.8, 2.8),
        use_tapm=use_tapm, use_vit=use_vit, use_shuffle=use_shuffle,
        vit_depth=1, lift_channels=16, trunk_channels=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def randomize_params(module, rng, scale=0.3):
    """Give every parameter (biases included) generic values for FD checks:
    zero biases park relu pre-activations exactly on the kink, where central
    differences are invalid."""
    for p in module.parameters().values():
        p.data = rng.normal(scale=scale, size=p.shape).astype(p.dtype)
