import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smalltrack.autograd import Tensor, grad_check
from smalltrack.geometry import (
    Box3D, align_template_to_box, box_corners, center_distance,
    chamfer_distance, enlarge_and_crop, farthest_point_sample, points_in_box,
    rotated_iou_3d, world_to_box,
)

from _oracles import brute_chamfer, brute_fps, corner_frame_membership, monte_carlo_iou


def random_box(rng, center_scale=2.0) -> Box3D:
    return Box3D(rng.uniform(-center_scale, center_scale, 3),
                 rng.uniform(0.3, 2.0, 3),
                 rng.uniform(-math.pi, math.pi))


# -- Box3D -----------------------------------------------------------------------

def test_box_requires_positive_size():
    with pytest.raises(ValueError, match="positive"):
        Box3D(np.zeros(3), np.array([1.0, 0.0, 1.0]), 0.0)


@given(st.floats(-50, 50))
@settings(max_examples=50, deadline=None)
def test_heading_normalized_to_half_open_interval(theta):
    box = Box3D(np.zeros(3), np.ones(3), theta)
    assert -math.pi < box.heading <= math.pi


def test_corners_unit_box():
    got = box_corners(Box3D(np.zeros(3), np.ones(3), 0.0))
    expected = {(sx * 0.5, sy * 0.5, sz * 0.5)
                for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)}
    assert {tuple(np.round(c, 9)) for c in got} == expected


def test_corners_quarter_turn_swaps_extents():
    c = box_corners(Box3D(np.zeros(3), np.array([1.0, 2.0, 1.0]), math.pi / 2))
    assert np.allclose(np.abs(c[:, 0]).max(), 1.0)
    assert np.allclose(np.abs(c[:, 1]).max(), 0.5)


def test_corners_diagonal_radius():
    c = box_corners(Box3D(np.zeros(3), np.ones(3), math.pi / 4))
    radii = np.linalg.norm(c[:, :2], axis=1)
    assert np.allclose(radii, math.sqrt(2) / 2)


# -- membership ---------------------------------------------------------------------

def test_center_point_included():
    box = Box3D(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.8, 1.1]), 0.7)
    assert np.array_equal(points_in_box(box.center.reshape(1, 3), box), [0])


def test_face_point_included():
    box = Box3D(np.zeros(3), np.array([2.0, 2.0, 2.0]), 0.0)
    assert np.array_equal(points_in_box(np.array([[1.0, 0.0, 0.0]]), box), [0])


@pytest.mark.parametrize("seed", range(3))
def test_membership_matches_corner_frame_oracle(seed):
    rng = np.random.default_rng(seed)
    box = random_box(rng)
    pts = rng.uniform(-3, 3, size=(100, 3))
    ours = np.zeros(100, dtype=bool)
    ours[points_in_box(pts, box)] = True
    assert np.array_equal(ours, corner_frame_membership(pts, box))


# -- IoU -------------------------------------------------------------------------

def test_iou_identical_boxes():
    box = Box3D(np.array([1.0, -2.0, 0.5]), np.array([1.2, 3.4, 0.9]), 0.3)
    assert rotated_iou_3d(box, box) == pytest.approx(1.0, abs=1e-12)


def test_iou_disjoint_boxes():
    a = Box3D(np.zeros(3), np.ones(3), 0.0)
    b = Box3D(np.array([10.0, 0.0, 0.0]), np.ones(3), 0.4)
    assert rotated_iou_3d(a, b) == 0.0


def test_iou_axis_aligned_half_offset():
    a = Box3D(np.zeros(3), np.ones(3), 0.0)
    b = Box3D(np.array([0.5, 0.0, 0.0]), np.ones(3), 0.0)
    assert rotated_iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_iou_matches_monte_carlo(seed):
    rng = np.random.default_rng(100 + seed)
    a = random_box(rng, center_scale=0.5)
    b = random_box(rng, center_scale=0.5)
    exact = rotated_iou_3d(a, b)
    estimate = monte_carlo_iou(a, b, samples=200_000, seed=seed)
    assert abs(exact - estimate) < 0.01


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_box(rng), random_box(rng)
    ab, ba = rotated_iou_3d(a, b), rotated_iou_3d(b, a)
    assert 0.0 <= ab <= 1.0
    assert ab == pytest.approx(ba, abs=1e-9)


def test_iou_one_only_for_identical_footprint():
    a = Box3D(np.zeros(3), np.array([1.0, 1.0, 1.0]), 0.2)
    b = Box3D(np.zeros(3), np.array([1.0, 1.0, 1.0]), 0.2 + math.pi)  # same footprint mod pi
    assert rotated_iou_3d(a, b) == pytest.approx(1.0, abs=1e-9)
    c = Box3D(np.zeros(3), np.array([1.0, 1.0, 1.0]), 0.5)
    assert rotated_iou_3d(a, c) < 1.0 - 1e-3


# -- chamfer ---------------------------------------------------------------------

def test_chamfer_identical_clouds_zero():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer_distance(pts, pts.copy()).item() == 0.0


def test_chamfer_hand_value():
    p = np.array([[0.0, 0.0, 0.0]])
    q = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    # brute force over all pairs: 1 + (1 + 1) = 3
    assert chamfer_distance(p, q).item() == 3.0


@pytest.mark.parametrize("seed", range(5))
def test_chamfer_matches_brute_force_exactly(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(rng.integers(1, 12), 3))
    q = rng.normal(size=(rng.integers(1, 12), 3))
    assert chamfer_distance(p, q).item() == brute_chamfer(p, q)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_chamfer_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(7, 3))
    q = rng.normal(size=(5, 3))
    base = chamfer_distance(p, q).item()
    permuted = chamfer_distance(p[rng.permutation(7)], q[rng.permutation(5)]).item()
    # identical pair minima; only the final summation order changes
    assert permuted == pytest.approx(base, rel=1e-12)


def test_chamfer_rejects_empty():
    with pytest.raises(ValueError, match="non-empty"):
        chamfer_distance(np.zeros((0, 3)), np.ones((1, 3)))


def test_chamfer_gradient_flows_to_both_clouds():
    rng = np.random.default_rng(42)
    p = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    q = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    assert grad_check(lambda: chamfer_distance(p, q), [p, q]) < 1e-4


# -- FPS -------------------------------------------------------------------------

def test_fps_colinear_brute_force():
    pts = np.array([[x, 0.0, 0.0] for x in range(5)])
    got = farthest_point_sample(pts, 3, start=0)
    assert list(got) == brute_fps(pts, 3, start=0) == [0, 4, 2]


def test_fps_all_points_deterministic():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(8, 3))
    a = farthest_point_sample(pts, 8)
    b = farthest_point_sample(pts, 8)
    assert sorted(a) == list(range(8))
    assert np.array_equal(a, b)


def test_fps_rejects_oversample():
    with pytest.raises(ValueError, match="cannot sample"):
        farthest_point_sample(np.zeros((3, 3)), 4)


@pytest.mark.parametrize("seed", range(5))
def test_fps_spreads_better_than_random_subsets(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    k = 6

    def min_pairwise(idx):
        sub = pts[list(idx)]
        d = np.linalg.norm(sub[:, None] - sub[None, :], axis=2)
        return d[np.triu_indices(k, 1)].min()

    ours = min_pairwise(farthest_point_sample(pts, k))
    for _ in range(20):
        assert ours >= min_pairwise(rng.choice(40, size=k, replace=False))


@pytest.mark.parametrize("seed", range(3))
def test_fps_matches_brute_force_on_random_clouds(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(15, 3))
    assert list(farthest_point_sample(pts, 6)) == brute_fps(pts, 6)


# -- cropping and alignment -----------------------------------------------------------

def test_crop_margin_zero_equals_membership():
    rng = np.random.default_rng(3)
    box = random_box(rng)
    pts = rng.uniform(-3, 3, size=(50, 3))
    assert np.array_equal(enlarge_and_crop(pts, box, 0.0), pts[points_in_box(pts, box)])


def test_crop_empty_cloud():
    box = Box3D(np.zeros(3), np.ones(3), 0.0)
    assert enlarge_and_crop(np.zeros((0, 3)), box, 2.0).shape == (0, 3)


def test_crop_includes_point_within_margin():
    box = Box3D(np.zeros(3), np.ones(3), 0.0)
    pt = np.array([[1.5, 0.0, 0.0]])  # 1 m outside the +x face
    assert enlarge_and_crop(pt, box, 2.0).shape[0] == 1
    assert enlarge_and_crop(pt, box, 0.5).shape[0] == 0


def test_align_identity():
    rng = np.random.default_rng(8)
    box = random_box(rng)
    pts = rng.normal(size=(10, 3))
    assert np.allclose(align_template_to_box(pts, box, box), pts, atol=1e-12)


def test_align_pure_translation():
    a = Box3D(np.zeros(3), np.ones(3), 0.4)
    b = Box3D(np.array([1.0, 2.0, 3.0]), np.ones(3), 0.4)
    pts = np.random.default_rng(1).normal(size=(5, 3))
    assert np.allclose(align_template_to_box(pts, a, b), pts + b.center, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_align_maps_center_to_center(theta_a, theta_b):
    a = Box3D(np.array([1.0, -1.0, 0.0]), np.ones(3), theta_a)
    b = Box3D(np.array([-2.0, 0.5, 1.0]), np.ones(3), theta_b)
    out = align_template_to_box(a.center.reshape(1, 3), a, b)
    assert np.allclose(out[0], b.center, atol=1e-9)


def test_alignment_preserves_membership_counts():
    rng = np.random.default_rng(12)
    a = random_box(rng)
    b = Box3D(rng.uniform(-2, 2, 3), a.size, rng.uniform(-3, 3))  # same-size target box
    pts = a.center + rng.uniform(-1, 1, size=(200, 3)) * (a.size / 2 * 1.4)
    moved = align_template_to_box(pts, a, b)
    assert len(points_in_box(pts, a)) == len(points_in_box(moved, b))


# -- center distance ------------------------------------------------------------------

def test_center_distance_values():
    a = Box3D(np.zeros(3), np.ones(3), 0.0)
    b = Box3D(np.array([3.0, 4.0, 0.0]), np.ones(3), 1.0)
    assert center_distance(a, a) == 0.0
    assert center_distance(a, b) == 5.0
    assert center_distance(a, b) == center_distance(b, a)


def test_world_to_box_roundtrip():
    rng = np.random.default_rng(77)
    box = random_box(rng)
    pts = rng.normal(size=(30, 3))
    from smalltrack.geometry import box_to_world
    assert np.allclose(box_to_world(world_to_box(pts, box), box), pts, atol=1e-12)


def test_chamfer_zero_for_set_equal_clouds():
    # each cloud a subset of the other's point set: zero in both directions
    p = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
    q = np.array([[3.0, 4.0, 5.0], [0.0, 1.0, 2.0], [0.0, 1.0, 2.0]])
    assert chamfer_distance(p, q).item() == 0.0
