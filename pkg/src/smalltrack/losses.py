"""Loss stack: penalty-reduced focal heat loss, smooth-L1 regression terms,
prototype Chamfer term, and their weighted aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, absval, clip, log, mul, reshape, slice_rows, sub, tensor_mean, tensor_sum
from .bev import BevTargets, PredictionMaps
from .data import NON_RIGID, RIGID
from .geometry import chamfer_distance

__all__ = ["LossWeights", "NonFiniteLoss", "focal_loss", "smooth_l1",
           "aggregate_components", "total_loss"]

_PROB_CLAMP = 1e-4


class NonFiniteLoss(ArithmeticError):
    """A loss component left the finite range; the message names it."""


@dataclass(frozen=True)
class LossWeights:
    lam1: float = 1.0
    lam2: float = 2.0
    lam3_non_rigid: float = 1e-6
    lam3_rigid: float = 2e-7

    def __post_init__(self):
        if min(self.lam1, self.lam2, self.lam3_non_rigid, self.lam3_rigid) < 0:
            raise ValueError("loss weights must be nonnegative")

    def lam3(self, category: str) -> float:
        if category == NON_RIGID:
            return self.lam3_non_rigid
        if category == RIGID:
            return self.lam3_rigid
        raise ValueError(f"unknown category {category!r}")


def focal_loss(heat: Tensor, heat_gt: np.ndarray) -> Tensor:
    """Penalty-reduced pixelwise focal loss for soft heat targets.

    Cells with target exactly 1 contribute -(1-p)^2 log p, all others
    -(1-target)^4 p^2 log(1-p); the sum is normalized by the positive count.
    Probabilities are clamped to [1e-4, 1-1e-4] inside the logs.
    """
    gt = np.asarray(heat_gt, dtype=np.float64)
    p = reshape(heat, gt.shape)
    if p.shape != gt.shape:
        raise ValueError(f"heat shape {heat.shape} does not match target {gt.shape}")
    pos = (gt == 1.0).astype(p.dtype)
    neg_w = ((1.0 - gt) ** 4 * (1.0 - pos)).astype(p.dtype)
    pc = clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    one = Tensor(np.asarray(1.0, dtype=p.dtype))
    pos_term = mul(Tensor(pos), mul(mul(sub(one, pc), sub(one, pc)), log(pc)))
    neg_term = mul(Tensor(neg_w), mul(mul(pc, pc), log(sub(one, pc))))
    num_pos = max(float(pos.sum()), 1.0)
    scale = Tensor(np.asarray(-1.0 / num_pos, dtype=p.dtype))
    return mul(scale, tensor_sum(pos_term + neg_term))


def smooth_l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean elementwise smooth-L1: 0.5 d^2 for |d|<1, |d|-0.5 beyond."""
    t = np.asarray(target, dtype=np.float64)
    if pred.shape != t.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {t.shape}")
    d = sub(pred, Tensor(t.astype(pred.dtype)))
    near = (np.abs(d.data) < 1.0).astype(pred.dtype)
    half = Tensor(np.asarray(0.5, dtype=pred.dtype))
    quad = mul(mul(half, d), d)
    lin = sub(absval(d), half)
    return tensor_mean(mul(Tensor(near), quad) + mul(Tensor(1.0 - near), lin))


def _at_center(maps_field: Tensor, cell: tuple[int, int]) -> Tensor:
    h, w, c = maps_field.shape
    flat = reshape(maps_field, (h * w, c))
    return slice_rows(flat, cell[0] * w + cell[1], cell[0] * w + cell[1] + 1)


def aggregate_components(l_hm: Tensor, l_off: Tensor, l_z: Tensor, l_cd: Tensor,
                         weights: LossWeights, category: str) -> Tensor:
    """lam1 * (heat + offset) + lam2 * z + lam3(category) * chamfer."""
    dt = l_hm.dtype
    return (mul(Tensor(np.asarray(weights.lam1, dt)), l_hm + l_off)
            + mul(Tensor(np.asarray(weights.lam2, dt)), l_z)
            + mul(Tensor(np.asarray(weights.lam3(category), dt)), l_cd))


def total_loss(maps: PredictionMaps, targets: BevTargets,
               proto_coords: Tensor | None, aligned_template: np.ndarray | None,
               weights: LossWeights, category: str) -> tuple[Tensor, dict[str, float]]:
    """Weighted component sum for one sample.

    Offset and z are supervised at the target's center cell only. Returns the
    scalar loss and a per-component float report; raises NonFiniteLoss naming
    the first non-finite component.
    """
    l_hm = focal_loss(maps.heat, targets.heat)
    l_off = smooth_l1(_at_center(maps.offset, targets.center_cell),
                      targets.offset.reshape(1, 3))
    l_z = smooth_l1(_at_center(maps.zmap, targets.center_cell),
                    np.array([[targets.z]]))
    if proto_coords is not None:
        if aligned_template is None:
            raise ValueError("prototype coordinates need an aligned template for the CD term")
        l_cd = chamfer_distance(proto_coords, aligned_template.astype(proto_coords.dtype))
    else:
        l_cd = Tensor(np.asarray(0.0))
    components = {"hm": l_hm.item(), "off": l_off.item(), "z": l_z.item(), "cd": l_cd.item()}
    for name, value in components.items():
        if not np.isfinite(value):
            raise NonFiniteLoss(f"loss component {name!r} is non-finite ({value})")
    total = aggregate_components(l_hm, l_off, l_z, l_cd, weights, category)
    components["total"] = total.item()
    return total, components
