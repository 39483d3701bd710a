"""Target-awareness prototype mining.

A learnable bank of substrate feature rows attends, together with masked
fusion features, through a stack of self-attention blocks. The refined bank
is decoded into prototype coordinates that densify the target; the masked
branch sees only detached fusion features so none of its losses feed back
into the backbone or fusion parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, concat, mul, relu, sigmoid, slice_rows, tanh
from .nn import AttentionBlock, Linear, Module, glorot_uniform

__all__ = ["TapmConfig", "PrototypeMiner", "assemble_enhanced"]


@dataclass(frozen=True)
class TapmConfig:
    prototype_count: int = 64
    attention_depth: int = 5
    heads: int = 4

    def __post_init__(self):
        if self.prototype_count < 1 or self.attention_depth < 1:
            raise ValueError("prototype_count and attention_depth must be >= 1")


class PrototypeMiner(Module):
    def __init__(self, cfg: TapmConfig, feature_dim: int,
                 region_bounds: tuple[float, float, float, float, float, float],
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.mask_proj = Linear(feature_dim, 1, rng, dtype)
        self.substrate = Tensor(
            glorot_uniform(rng, (cfg.prototype_count, feature_dim),
                           cfg.prototype_count, feature_dim, dtype),
            requires_grad=True)
        self.blocks = [AttentionBlock(feature_dim, cfg.heads, rng, dtype)
                       for _ in range(cfg.attention_depth)]
        self.coord_hidden = Linear(feature_dim, feature_dim, rng, dtype)
        self.coord_out = Linear(feature_dim, 3, rng, dtype)
        xmin, xmax, ymin, ymax, zmin, zmax = region_bounds
        self._region_mid = np.array([(xmin + xmax) / 2, (ymin + ymax) / 2, (zmin + zmax) / 2],
                                    dtype=dtype)
        self._region_half = np.array([(xmax - xmin) / 2, (ymax - ymin) / 2, (zmax - zmin) / 2],
                                     dtype=dtype)

    def mask_and_enhance(self, fused: Tensor) -> tuple[Tensor, Tensor]:
        """Sigmoid per-point mask over detached fusion features, applied row-wise.

        The detach realizes the stop-gradient contract: everything downstream
        of this call leaves the fusion/backbone graph untouched.
        """
        guide = fused.detach()
        mask = sigmoid(self.mask_proj(guide))          # [N, 1] in (0, 1)
        return mask, mul(mask, guide)

    def iterate(self, enhanced: Tensor, substrate: Tensor | None = None
                ) -> tuple[Tensor, Tensor]:
        """Run self-attention over [enhanced ; substrate] tokens and split.

        Returns (teacher, prototypes); the teacher rows are the refreshed
        search tokens and are dropped by the caller after guidance.
        """
        bank = self.substrate if substrate is None else substrate
        if enhanced.shape[1] != bank.shape[1]:
            raise ValueError(f"feature dims differ: {enhanced.shape[1]} vs {bank.shape[1]}")
        n = enhanced.shape[0]
        tokens = concat([enhanced, bank], axis=0)
        for block in self.blocks:
            tokens = block(tokens)
        return slice_rows(tokens, 0, n), slice_rows(tokens, n, tokens.shape[0])

    def predict_coords(self, prototypes: Tensor) -> Tensor:
        """Decode prototype rows to 3D points squashed into the search region."""
        raw = self.coord_out(relu(self.coord_hidden(prototypes)))
        return add(mul(tanh(raw), Tensor(self._region_half)), Tensor(self._region_mid))

    def __call__(self, fused: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Full pass: (mask, prototype features, prototype coordinates)."""
        _mask, enhanced = self.mask_and_enhance(fused)
        _teacher, protos = self.iterate(enhanced)
        return _mask, protos, self.predict_coords(protos)


def assemble_enhanced(search_coords: np.ndarray, fused: Tensor,
                      proto_coords: Tensor, proto_feats: Tensor
                      ) -> tuple[np.ndarray, Tensor]:
    """Concatenate [P_S ; P_I] coordinates and [fused ; prototype] features.

    The feature side carries the un-detached fusion path; coordinates are
    plain arrays (cell assignment downstream is not differentiable).
    """
    search_coords = np.asarray(search_coords).reshape(-1, 3)
    if search_coords.shape[0] != fused.shape[0]:
        raise ValueError(f"search counts differ: {search_coords.shape[0]} vs {fused.shape[0]}")
    if proto_coords.shape[0] != proto_feats.shape[0]:
        raise ValueError(
            f"prototype counts differ: {proto_coords.shape[0]} vs {proto_feats.shape[0]}")
    if proto_feats.shape[1] != fused.shape[1]:
        raise ValueError(f"feature dims differ: {proto_feats.shape[1]} vs {fused.shape[1]}")
    coords = np.concatenate([search_coords, np.asarray(proto_coords.data)], axis=0)
    feats = concat([fused, proto_feats], axis=0)
    return coords, feats
