"""Sequence persistence, synthetic benchmark generation, foreground scaling,
and training-sample assembly.

Frame files are little-endian binary: magic "PCF1", u32 point count,
count*3 float32 coordinates, then 7 float32 box fields (x,y,z,w,l,h,theta).
A sequence manifest is UTF-8 JSON: {"id", "category", "frames": [paths]}.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    Box3D, align_template_to_box, box_to_world, enlarge_and_crop,
    points_in_box, world_to_box,
)

__all__ = [
    "Frame", "Sequence", "SyntheticSpec", "TrainingSample",
    "FrameFormatError", "EmptySearchRegion",
    "write_frame", "read_frame", "write_sequence", "read_sequence",
    "load_dataset", "generate_synthetic", "scale_sequence",
    "make_training_sample", "resample",
    "TARGET_SHAPES",
]

_MAGIC = b"PCF1"

RIGID = "rigid"
NON_RIGID = "non-rigid"


class FrameFormatError(ValueError):
    """Raised on malformed frame files; message names the defect."""


class EmptySearchRegion(RuntimeError):
    """Signals that a training sample had no candidate points and was skipped."""


@dataclass
class Frame:
    cloud: np.ndarray  # [N,3] float32
    gt: Box3D

    def __post_init__(self):
        cloud = np.asarray(self.cloud, dtype=np.float32).reshape(-1, 3)
        if cloud.size and not np.all(np.isfinite(cloud)):
            raise ValueError("frame cloud must be finite")
        self.cloud = cloud


@dataclass
class Sequence:
    id: str
    category: str  # "rigid" | "non-rigid"
    frames: list[Frame]

    def __post_init__(self):
        if self.category not in (RIGID, NON_RIGID):
            raise ValueError(f"unknown category {self.category!r}")
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        size0 = self.frames[0].gt.size
        for f in self.frames[1:]:
            if not np.allclose(f.gt.size, size0, atol=1e-6):
                raise ValueError("ground-truth size must be constant across frames")


# -- frame IO --------------------------------------------------------------------

def write_frame(path, frame: Frame) -> None:
    pts = frame.cloud.astype("<f4")
    box = np.array([*frame.gt.center, *frame.gt.size, frame.gt.heading], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", pts.shape[0]))
        fh.write(pts.tobytes())
        fh.write(box.tobytes())


def read_frame(path) -> Frame:
    blob = Path(path).read_bytes()
    if blob[:4] != _MAGIC:
        raise FrameFormatError(f"bad magic in {path}")
    if len(blob) < 8:
        raise FrameFormatError(f"truncated buffer in {path}")
    (count,) = struct.unpack("<I", blob[4:8])
    expected = 8 + count * 12 + 28
    if len(blob) < expected:
        raise FrameFormatError(f"truncated buffer in {path}")
    if len(blob) > expected:
        raise FrameFormatError(f"trailing bytes in {path}")
    pts = np.frombuffer(blob, dtype="<f4", count=count * 3, offset=8).reshape(count, 3)
    box = np.frombuffer(blob, dtype="<f4", count=7, offset=8 + count * 12).astype(np.float64)
    if (pts.size and not np.all(np.isfinite(pts))) or not np.all(np.isfinite(box)):
        raise FrameFormatError(f"non-finite values in {path}")
    return Frame(cloud=pts.copy(), gt=Box3D(box[:3], box[3:6], float(box[6])))


def write_sequence(directory, seq: Sequence) -> Path:
    """Write frames plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(seq.frames):
        name = f"frame_{i:04d}.pcf"
        write_frame(directory / name, frame)
        names.append(name)
    manifest = directory / "manifest.json"
    manifest.write_text(json.dumps(
        {"id": seq.id, "category": seq.category, "frames": names}, indent=1) + "\n",
        encoding="utf-8")
    return manifest


def read_sequence(manifest_path) -> Sequence:
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text(encoding="utf-8"))
    frames = [read_frame(manifest_path.parent / name) for name in meta["frames"]]
    return Sequence(id=meta["id"], category=meta["category"], frames=frames)


def load_dataset(directory) -> list[Sequence]:
    """All sequences under a directory, ordered by manifest path."""
    manifests = sorted(Path(directory).glob("*/manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"no sequence manifests under {directory}")
    return [read_sequence(m) for m in manifests]


# -- synthetic benchmark -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    num_sequences: int = 10
    frames_per_seq: int = 20
    target_kind: str = "capsule-pair"  # slab | cylinder | capsule-pair
    clutter_count: int = 6
    point_density: float = 60.0  # expected foreground points at reference range
    ground_points: int = 400

    def __post_init__(self):
        if self.num_sequences <= 0 or self.frames_per_seq < 2:
            raise ValueError("spec must request >=1 sequence of >=2 frames")
        if self.target_kind not in TARGET_SHAPES:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.clutter_count < 0 or self.point_density <= 0:
            raise ValueError("clutter_count and point_density must be positive")


# gt box sizes (w, l, h); surfaces are sampled strictly inside the box so
# scaled points never sit exactly on the scaled boundary
TARGET_SHAPES = {
    "slab": {"size": (1.8, 4.0, 1.5), "category": RIGID},
    "cylinder": {"size": (1.0, 1.0, 1.6), "category": RIGID},
    # torso+legs pair, footprint within the 1.0 x 0.5 small-object regime
    "capsule-pair": {"size": (0.6, 0.4, 1.7), "category": NON_RIGID},
}
_SURFACE_SHRINK = 0.92  # object surface relative to gt box extents
_REFERENCE_RANGE = 10.0  # meters at which point_density applies in full
# the generator guarantees >=1 foreground point per frame whenever
# point_density * (reference/range)^2 >= 1 at the farthest target range (28 m
# with the trajectory bounds below), i.e. point_density >= 8.

_RANGE_LO, _RANGE_HI = 6.0, 16.0
_MAX_TURN = 0.12        # radians per frame
_SPEED_LO, _SPEED_HI = 0.05, 0.30  # meters per frame
_GROUND_CLEARANCE = 0.02  # keeps ground scatter strictly below the gt box


def _surface_slab(rng: np.random.Generator, n: int, size: np.ndarray) -> np.ndarray:
    """Points on the faces of a centered cuboid."""
    half = size / 2.0
    areas = np.array([size[1] * size[2], size[1] * size[2],
                      size[0] * size[2], size[0] * size[2],
                      size[0] * size[1], size[0] * size[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=n)
    v = rng.uniform(-1, 1, size=n)
    pts = np.empty((n, 3))
    for i, f in enumerate(face):
        axis = f // 2
        sign = 1.0 if f % 2 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[i, axis] = sign * half[axis]
        pts[i, others[0]] = u[i] * half[others[0]]
        pts[i, others[1]] = v[i] * half[others[1]]
    return pts


def _surface_cylinder(rng: np.random.Generator, n: int, size: np.ndarray) -> np.ndarray:
    radius = size[0] / 2.0
    ang = rng.uniform(0, math.tau, size=n)
    z = rng.uniform(-size[2] / 2.0, size[2] / 2.0, size=n)
    return np.stack([radius * np.cos(ang), radius * np.sin(ang) * (size[1] / size[0]), z], axis=1)


def _surface_capsule_pair(rng: np.random.Generator, n: int, size: np.ndarray) -> np.ndarray:
    """Torso capsule above two leg capsules, pedestrian-like."""
    half_h = size[2] / 2.0
    torso_r = 0.42 * size[0]
    leg_r = 0.2 * size[0]
    kind = rng.uniform(size=n)
    ang = rng.uniform(0, math.tau, size=n)
    pts = np.empty((n, 3))
    torso = kind < 0.6
    nt = int(torso.sum())
    pts[torso, 0] = torso_r * np.cos(ang[torso])
    pts[torso, 1] = torso_r * np.sin(ang[torso]) * (size[1] / size[0])
    pts[torso, 2] = rng.uniform(0.0, half_h, size=nt)
    legs = ~torso
    side = np.where(rng.uniform(size=int(legs.sum())) < 0.5, -1.0, 1.0)
    pts[legs, 0] = leg_r * np.cos(ang[legs]) + side * 0.25 * size[0]
    pts[legs, 1] = leg_r * np.sin(ang[legs])
    pts[legs, 2] = rng.uniform(-half_h, 0.0, size=int(legs.sum()))
    return pts


_SURFACES = {"slab": _surface_slab, "cylinder": _surface_cylinder,
             "capsule-pair": _surface_capsule_pair}


def _foreground_count(density: float, distance: float) -> int:
    falloff = min(1.0, (_REFERENCE_RANGE / max(distance, 1e-6)) ** 2)
    return int(round(density * falloff))


def _generate_sequence(seed_seq: np.random.SeedSequence, index: int,
                       spec: SyntheticSpec) -> Sequence:
    rng = np.random.default_rng(seed_seq)
    shape = TARGET_SHAPES[spec.target_kind]
    size = np.asarray(shape["size"], dtype=np.float64)
    surface = _SURFACES[spec.target_kind]

    # smooth random-walk trajectory with bounded per-frame heading change
    start_ang = rng.uniform(0, math.tau)
    start_range = rng.uniform(_RANGE_LO, _RANGE_HI)
    pos = np.array([start_range * math.cos(start_ang),
                    start_range * math.sin(start_ang),
                    size[2] / 2.0 + _GROUND_CLEARANCE])
    heading = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(_SPEED_LO, _SPEED_HI)
    centers, headings = [], []
    for _ in range(spec.frames_per_seq):
        centers.append(pos.copy())
        headings.append(heading)
        heading = heading + rng.uniform(-_MAX_TURN, _MAX_TURN)
        pos = pos + speed * np.array([math.cos(heading), math.sin(heading), 0.0])

    # static background: ground scatter plus clutter objects, some of them
    # same-shape distractors parked near the trajectory corridor
    centers_arr = np.array(centers)
    bg_parts = []
    if spec.ground_points:
        ang = rng.uniform(0, math.tau, size=spec.ground_points)
        rad = np.sqrt(rng.uniform(0, 1, size=spec.ground_points)) * (_RANGE_HI + 14.0)
        bg_parts.append(np.stack([rad * np.cos(ang), rad * np.sin(ang),
                                  np.zeros(spec.ground_points)], axis=1))
    for c in range(spec.clutter_count):
        near_target = c % 3 == 0
        if near_target:
            anchor = centers_arr[rng.integers(len(centers_arr))]
            offset_ang = rng.uniform(0, math.tau)
            offset_rad = rng.uniform(1.2, 3.0)
            base = anchor[:2] + offset_rad * np.array([math.cos(offset_ang), math.sin(offset_ang)])
            pts = surface(rng, max(8, int(spec.point_density * 0.5)), size * _SURFACE_SHRINK)
        else:
            ang = rng.uniform(0, math.tau)
            rad = rng.uniform(3.0, _RANGE_HI + 10.0)
            base = rad * np.array([math.cos(ang), math.sin(ang)])
            blob = rng.normal(scale=0.4, size=(max(6, int(spec.point_density * 0.3)), 3))
            pts = blob * np.array([1.0, 1.0, 0.8])
        pts = pts + np.array([base[0], base[1], size[2] / 2.0])
        bg_parts.append(pts)
    background = (np.concatenate(bg_parts, axis=0) if bg_parts
                  else np.zeros((0, 3))).astype(np.float32)

    frames = []
    for t in range(spec.frames_per_seq):
        c, th = centers[t], headings[t]
        dist = float(np.linalg.norm(c[:2]))
        n_fg = _foreground_count(spec.point_density, dist)
        local = surface(rng, max(n_fg, 0), size * _SURFACE_SHRINK)
        box = Box3D(c, size, th)
        fg = box_to_world(local, box).astype(np.float32)
        cloud = np.concatenate([fg, background], axis=0)
        frames.append(Frame(cloud=cloud, gt=box))
    return Sequence(id=f"seq_{index:04d}", category=shape["category"], frames=frames)


def generate_synthetic(seed: int, spec: SyntheticSpec) -> list[Sequence]:
    """Deterministic synthetic tracking benchmark."""
    children = np.random.SeedSequence(seed).spawn(spec.num_sequences)
    return [_generate_sequence(child, i, spec) for i, child in enumerate(children)]


# -- scaling experiment -------------------------------------------------------------

def scale_sequence(seq: Sequence, rate: float) -> Sequence:
    """Shrink foreground points toward each frame's box center by ``rate``.

    Background points are bit-identical; the gt box size scales by the same
    rate with center and heading unchanged. rate=1 is an exact identity.
    """
    if not (0.0 < rate <= 1.0):
        raise ValueError(f"scaling rate must be in (0, 1], got {rate}")
    frames = []
    for frame in seq.frames:
        if rate == 1.0:
            frames.append(Frame(cloud=frame.cloud.copy(), gt=frame.gt))
            continue
        cloud = frame.cloud.copy()
        fg = points_in_box(cloud, frame.gt)
        center = frame.gt.center
        moved = center + rate * (cloud[fg].astype(np.float64) - center)
        cloud[fg] = moved.astype(np.float32)
        frames.append(Frame(cloud=cloud,
                            gt=Box3D(center.copy(), frame.gt.size * rate, frame.gt.heading)))
    return Sequence(id=seq.id, category=seq.category, frames=frames)


# -- training samples ----------------------------------------------------------------

SEARCH_POINTS = 1024
TEMPLATE_POINTS = 512
SEARCH_MARGIN = 2.0
_JITTER_XY = 0.3
_JITTER_Z = 0.1


@dataclass
class TrainingSample:
    """One supervised tracking step, expressed in the search-region frame."""

    search: np.ndarray            # [1024, 3]
    template: np.ndarray          # [512, 3] canonical box frame
    gt: Box3D                     # target box in the local frame
    aligned_template: np.ndarray  # [512, 3] template re-posed onto gt


def resample(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Exactly k rows; subsample without replacement, pad with replacement."""
    n = points.shape[0]
    if n == 0:
        raise ValueError("cannot resample an empty cloud")
    if n >= k:
        idx = rng.choice(n, size=k, replace=False)
    else:
        idx = rng.choice(n, size=k, replace=True)
    return points[idx]


def make_training_sample(seq: Sequence, frame_idx: int, rng: np.random.Generator,
                         jitter_xy: float = _JITTER_XY,
                         jitter_z: float = _JITTER_Z) -> TrainingSample:
    """Assemble search/template clouds around the (jittered) previous gt box."""
    if frame_idx < 1:
        raise ValueError("frame_idx must be >= 1")
    cur = seq.frames[frame_idx]
    prev = seq.frames[frame_idx - 1]

    jitter = np.array([rng.uniform(-jitter_xy, jitter_xy),
                       rng.uniform(-jitter_xy, jitter_xy),
                       rng.uniform(-jitter_z, jitter_z)])
    region_box = Box3D(prev.gt.center + jitter, prev.gt.size, prev.gt.heading)

    crop = enlarge_and_crop(cur.cloud, region_box, SEARCH_MARGIN)
    if crop.shape[0] == 0:
        raise EmptySearchRegion(f"{seq.id} frame {frame_idx}")
    search = world_to_box(resample(crop, SEARCH_POINTS, rng), region_box)

    first = seq.frames[0]
    parts = [world_to_box(first.cloud[points_in_box(first.cloud, first.gt)], first.gt),
             world_to_box(prev.cloud[points_in_box(prev.cloud, prev.gt)], prev.gt)]
    merged = np.concatenate(parts, axis=0)
    if merged.shape[0] == 0:
        raise EmptySearchRegion(f"{seq.id} frame {frame_idx}: empty template")
    template = resample(merged, TEMPLATE_POINTS, rng)

    gt_local = Box3D(world_to_box(cur.gt.center, region_box)[0],
                     cur.gt.size, cur.gt.heading - region_box.heading)
    canonical = Box3D(np.zeros(3), cur.gt.size, 0.0)
    aligned = align_template_to_box(template, canonical, gt_local)
    return TrainingSample(search=search.astype(np.float32),
                          template=template.astype(np.float32),
                          gt=gt_local,
                          aligned_template=aligned.astype(np.float32))
