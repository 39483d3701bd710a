"""Oriented 3D box and point-cloud geometry.

Point clouds are plain (N, 3) float arrays. All functions are pure; boxes
rotate about the up (z) axis only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor, as_tensor, reduce_min, sub, mul, tensor_sum, add,
)

__all__ = [
    "Box3D", "box_corners", "points_in_box", "rotated_iou_3d",
    "chamfer_distance", "farthest_point_sample", "enlarge_and_crop",
    "align_template_to_box", "center_distance",
    "world_to_box", "box_to_world",
]


def _normalize_heading(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    t = math.remainder(theta, math.tau)
    if t <= -math.pi:
        t += math.tau
    return t


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x,y,z), size (width, length, height), heading about z."""

    center: np.ndarray
    size: np.ndarray
    heading: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        size = np.asarray(self.size, dtype=np.float64)
        if center.shape != (3,) or size.shape != (3,):
            raise ValueError("center and size must be 3-vectors")
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(size)) and math.isfinite(self.heading)):
            raise ValueError("box fields must be finite")
        if np.any(size <= 0):
            raise ValueError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "heading", _normalize_heading(float(self.heading)))

    def enlarged(self, margin: float) -> "Box3D":
        """Grow every size dimension by 2*margin (margin per side)."""
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        return Box3D(self.center.copy(), self.size + 2.0 * margin, self.heading)

    def volume(self) -> float:
        return float(np.prod(self.size))


def _rotation2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Express world points in the box frame (center at origin, heading along +x)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d = pts - box.center
    rot = _rotation2d(-box.heading)
    out = d.copy()
    out[:, :2] = d[:, :2] @ rot.T
    return out


def box_to_world(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Inverse of ``world_to_box``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rot = _rotation2d(box.heading)
    out = pts.copy()
    out[:, :2] = pts[:, :2] @ rot.T
    return out + box.center


_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=np.float64)


def box_corners(box: Box3D) -> np.ndarray:
    """8 corners, enumerated (-,-,-), (-,-,+), (-,+,-), ... with x fastest last."""
    local = _CORNER_SIGNS * (box.size / 2.0)
    return box_to_world(local, box)


def points_in_box(points: np.ndarray, box: Box3D) -> np.ndarray:
    """Indices of points inside the box, boundary inclusive."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    local = world_to_box(pts, box)
    half = box.size / 2.0
    inside = np.all(np.abs(local) <= half, axis=1)
    return np.nonzero(inside)[0]


def enlarge_and_crop(points: np.ndarray, box: Box3D, margin: float) -> np.ndarray:
    """Points inside the box grown by ``margin`` per side."""
    pts = np.asarray(points).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts.copy()
    return pts[points_in_box(pts, box.enlarged(margin))]


def align_template_to_box(template: np.ndarray, from_box: Box3D, to_box: Box3D) -> np.ndarray:
    """Re-pose points from one box frame to another (rotate by the heading
    delta about the source center, translate by the center delta)."""
    return box_to_world(world_to_box(template, from_box), to_box)


def center_distance(a: Box3D, b: Box3D) -> float:
    return float(np.linalg.norm(a.center - b.center))


# -- rotated IoU ----------------------------------------------------------------

def _footprint(box: Box3D) -> np.ndarray:
    """BEV corners in counter-clockwise order."""
    half_w, half_l = box.size[0] / 2.0, box.size[1] / 2.0
    local = np.array([[half_w, half_l], [-half_w, half_l],
                      [-half_w, -half_l], [half_w, -half_l]])
    return local @ _rotation2d(box.heading).T + box.center[:2]


def _clip_polygon(poly: list[np.ndarray], a: np.ndarray, b: np.ndarray) -> list[np.ndarray]:
    """Sutherland-Hodgman clip against the half-plane left of edge a->b."""
    if not poly:
        return poly
    edge = b - a
    out = []
    prev = poly[-1]
    prev_side = edge[0] * (prev[1] - a[1]) - edge[1] * (prev[0] - a[0])
    for cur in poly:
        cur_side = edge[0] * (cur[1] - a[1]) - edge[1] * (cur[0] - a[0])
        if cur_side >= 0:
            if prev_side < 0:
                t = prev_side / (prev_side - cur_side)
                out.append(prev + t * (cur - prev))
            out.append(cur)
        elif prev_side >= 0:
            t = prev_side / (prev_side - cur_side)
            out.append(prev + t * (cur - prev))
        prev, prev_side = cur, cur_side
    return out


def _polygon_area(poly: list[np.ndarray]) -> float:
    if len(poly) < 3:
        return 0.0
    area = 0.0
    for p, q in zip(poly, poly[1:] + poly[:1]):
        area += p[0] * q[1] - p[1] * q[0]
    return 0.5 * area


def rotated_iou_3d(a: Box3D, b: Box3D) -> float:
    """Exact IoU: convex BEV polygon intersection times z-extent overlap."""
    poly = list(_footprint(a))
    fb = _footprint(b)
    for p, q in zip(fb, np.roll(fb, -1, axis=0)):
        poly = _clip_polygon(poly, p, q)
        if not poly:
            break
    area = _polygon_area(poly)
    if area < 1e-12:
        return 0.0
    za0, za1 = a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0
    zb0, zb1 = b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0
    z_overlap = max(0.0, min(za1, zb1) - max(za0, zb0))
    inter = area * z_overlap
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0))


# -- chamfer ---------------------------------------------------------------------

def chamfer_distance(p, q) -> Tensor:
    """Sum of squared nearest-neighbor distances in both directions.

    Unnormalized; accepts Tensors (gradient flows to both clouds) or arrays.
    """
    pt, qt = as_tensor(p), as_tensor(q)
    if pt.ndim != 2 or pt.shape[1] != 3 or qt.ndim != 2 or qt.shape[1] != 3:
        raise ValueError(f"point clouds must be [N,3], got {pt.shape} and {qt.shape}")
    if pt.shape[0] == 0 or qt.shape[0] == 0:
        raise ValueError("chamfer_distance requires non-empty clouds")
    diff = sub(pt.reshape(pt.shape[0], 1, 3), qt.reshape(1, qt.shape[0], 3))
    sq = tensor_sum(mul(diff, diff), axis=2)          # [|P|, |Q|] pairwise squared distances
    return add(tensor_sum(reduce_min(sq, axis=1)), tensor_sum(reduce_min(sq, axis=0)))


# -- sampling --------------------------------------------------------------------

def farthest_point_sample(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Greedy max-min selection of k point indices, deterministic given start."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"cannot sample {k} points from {n}")
    if k <= 0:
        raise ValueError("k must be positive")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, k):
        idx = int(np.argmax(dist))
        chosen[i] = idx
        dist = np.minimum(dist, np.linalg.norm(pts - pts[idx], axis=1))
    return chosen
