import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smalltrack.autograd import (
    ShapeError, Tensor, absval, clip, concat, conv2d, gather_rows, grad_check,
    layer_norm, matmul, mul, multi_head_attention, pixel_shuffle,
    pixel_unshuffle, reduce_max, reduce_min, relu, reshape, segment_max,
    sigmoid, slice_rows, softmax, tensor_mean, tensor_sum, transpose,
)
from smalltrack.nn import AttentionBlock, Linear, MultiHeadAttention


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0, 4.0], [5.0, 6.0]]))
    assert np.array_equal(out.data, np.array([[3, 4], [5, 6]], dtype=np.float32))


def test_matmul_hand_expansion():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.reshape(()) == 11.0


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize("seed", range(3))
def test_matmul_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    a = t64(rng.normal(size=(5, 4)))
    b = t64(rng.normal(size=(4, 3)))
    w = t64(rng.normal(size=(5, 3)), grad=False)
    err = grad_check(lambda: tensor_sum(mul(matmul(a, b), w)), [a, b])
    assert err < 1e-4


# -- conv2d ----------------------------------------------------------------------

def test_conv2d_identity_kernel():
    x = Tensor(np.arange(9, dtype=np.float32).reshape(3, 3, 1))
    k = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
    assert np.array_equal(conv2d(x, k).data, x.data)


def test_conv2d_ones_hand_count():
    x = Tensor(np.ones((3, 3, 1), dtype=np.float32))
    k = Tensor(np.ones((3, 3, 1, 1), dtype=np.float32))
    out = conv2d(x, k).data[:, :, 0]
    expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float32)
    assert np.array_equal(out, expected)


def test_conv2d_channel_mismatch_rejected():
    with pytest.raises(ShapeError, match="channel"):
        conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


def test_conv2d_even_kernel_rejected():
    with pytest.raises(ShapeError, match="odd"):
        conv2d(Tensor(np.zeros((4, 4, 1))), Tensor(np.zeros((2, 2, 1, 1))))


@pytest.mark.parametrize("seed", range(3))
def test_conv2d_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng.normal(size=(6, 6, 2)))
    k = t64(rng.normal(size=(3, 3, 2, 3)))
    w = t64(rng.normal(size=(6, 6, 3)), grad=False)
    err = grad_check(lambda: tensor_sum(mul(conv2d(x, k), w)), [x, k])
    assert err < 1e-4


# -- elementwise -----------------------------------------------------------------

def test_sigmoid_at_zero():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5


def test_softmax_symmetry():
    out = softmax(Tensor([[0.0, 0.0, 0.0]])).data
    assert np.allclose(out, 1.0 / 3.0, atol=1e-7)


def test_relu_values():
    assert np.array_equal(relu(Tensor([-1.0, 2.0])).data, np.array([0.0, 2.0], np.float32))


def test_layer_norm_moments():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(5, 16)) * 3 + 1)
    out = layer_norm(x).data
    assert np.all(np.abs(out.mean(axis=-1)) < 1e-5)
    assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-4)


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one(seed, rows, cols):
    rng = np.random.default_rng(seed)
    out = softmax(Tensor(rng.normal(size=(rows, cols)) * 5)).data
    assert np.all(out > 0) and np.all(out < 1.0 + 1e-7)
    assert np.all(np.abs(out.sum(axis=-1) - 1.0) < 1e-6)


@pytest.mark.parametrize("fn", [sigmoid, relu, softmax, layer_norm, absval])
def test_elementwise_gradients(fn):
    rng = np.random.default_rng(7)
    x = t64(rng.normal(size=(4, 5)) + 0.1)  # offset keeps relu/abs off the kink
    w = t64(rng.normal(size=(4, 5)), grad=False)
    err = grad_check(lambda: tensor_sum(mul(fn(x), w)), [x])
    assert err < 1e-4


def test_clip_gradient_zero_outside_range():
    x = t64([[-2.0, 0.5, 2.0]])
    tensor_sum(clip(x, 0.0, 1.0)).backward()
    assert np.array_equal(x.grad, np.array([[0.0, 1.0, 0.0]]))


# -- attention -------------------------------------------------------------------

def test_attention_singleton_weight_is_one():
    rng = np.random.default_rng(3)
    mha = MultiHeadAttention(8, 2, rng)
    token = Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    out = mha(token, token, token)
    expected = mha.wo(mha.wv(token))
    assert np.array_equal(out.data, expected.data)


def test_attention_block_singleton_residual():
    rng = np.random.default_rng(4)
    block = AttentionBlock(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 8)).astype(np.float32))
    h = block.ln_q(x)
    after_attn = x + block.attn(h, h, h)
    expected = after_attn + block.ff2(relu(block.ff1(block.ln_ff(after_attn))))
    assert np.array_equal(block(x).data, expected.data)


def test_attention_identical_keys_permutation_invariant():
    rng = np.random.default_rng(5)
    mha = MultiHeadAttention(8, 2, rng)
    q = Tensor(rng.normal(size=(3, 8)).astype(np.float32))
    k = Tensor(np.tile(rng.normal(size=(1, 8)).astype(np.float32), (5, 1)))
    v_rows = rng.normal(size=(5, 8)).astype(np.float32)
    perm = np.random.default_rng(0).permutation(5)
    out1 = mha(q, k, Tensor(v_rows)).data
    out2 = mha(q, k, Tensor(v_rows[perm])).data
    assert np.allclose(out1, out2, atol=1e-5)


def test_attention_head_split_rejected():
    with pytest.raises(ShapeError, match="divisible"):
        multi_head_attention(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))),
                             Tensor(np.zeros((2, 6))), heads=4)


@pytest.mark.parametrize("seed", range(3))
def test_attention_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
    q = t64(rng.normal(size=(4, 8)))
    k = t64(rng.normal(size=(4, 8)))
    v = t64(rng.normal(size=(4, 8)))
    w = t64(rng.normal(size=(4, 8)), grad=False)
    wiggle = [q, k, v] + list(mha.parameters().values())
    err = grad_check(lambda: tensor_sum(mul(mha(q, k, v), w)), wiggle)
    assert err < 1e-4


# -- pixel shuffle ----------------------------------------------------------------

def test_pixel_shuffle_forced_layout():
    x = Tensor(np.array([[[1.0, 2.0, 3.0, 4.0]]], dtype=np.float32))
    out = pixel_shuffle(x).data[:, :, 0]
    assert np.array_equal(out, np.array([[1, 2], [3, 4]], dtype=np.float32))


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_pixel_shuffle_bijection_bit_exact(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(3, 5, 8)).astype(np.float32))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(x)).data, x.data)


def test_pixel_shuffle_preserves_sum_exactly():
    rng = np.random.default_rng(11)
    x = Tensor(rng.normal(size=(4, 6, 8)).astype(np.float32))
    out = pixel_shuffle(x)
    assert np.sum(out.data, dtype=np.float64) == np.sum(x.data, dtype=np.float64)


def test_pixel_shuffle_channel_constraint():
    with pytest.raises(ShapeError, match="divisible"):
        pixel_shuffle(Tensor(np.zeros((2, 2, 6))))


def test_pixel_shuffle_gradient():
    rng = np.random.default_rng(13)
    x = t64(rng.normal(size=(2, 3, 8)))
    w = t64(rng.normal(size=(4, 6, 2)), grad=False)
    err = grad_check(lambda: tensor_sum(mul(pixel_shuffle(x), w)), [x])
    assert err < 1e-4


# -- backward / graph -------------------------------------------------------------

def test_backward_of_sum_is_ones():
    x = t64(np.random.default_rng(0).normal(size=(3, 4)))
    tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_square_sum():
    x = t64([1.0, 2.0])
    tensor_sum(mul(x, x)).backward()
    assert np.array_equal(x.grad, np.array([2.0, 4.0]))


def test_backward_rejects_non_scalar():
    x = t64(np.ones((2, 2)))
    with pytest.raises(ShapeError, match="scalar"):
        mul(x, x).backward()


def test_repeated_backward_accumulates():
    x = t64([3.0])
    loss = tensor_sum(mul(x, x))
    loss.backward()
    loss.backward()
    assert np.array_equal(x.grad, np.array([12.0]))  # 2 * (2x)


def test_composite_mlp_gradients():
    rng = np.random.default_rng(21)
    lin1 = Linear(5, 7, rng, dtype=np.float64)
    lin2 = Linear(7, 1, rng, dtype=np.float64)
    x = t64(rng.normal(size=(4, 5)))
    wiggle = [x, lin1.w, lin1.b, lin2.w, lin2.b]
    err = grad_check(lambda: tensor_sum(mul(lin2(relu(lin1(x))), lin2(relu(lin1(x))))), wiggle)
    assert err < 1e-4


def test_grad_check_identity_sum_is_zero_error():
    x = t64(np.zeros(3))  # x +- h is exact here, so the difference quotient is exactly 1
    assert grad_check(lambda: tensor_sum(x), [x]) == 0.0


def test_grad_check_sigmoid_quarter_slope():
    x = t64(np.zeros(4))
    err = grad_check(lambda: tensor_sum(sigmoid(x)), [x])
    assert err < 1e-6  # analytic slope 0.25 per element at 0


def test_graph_replay_bit_identical():
    rng = np.random.default_rng(17)
    lin = Linear(6, 6, rng)
    x = Tensor(np.random.default_rng(3).normal(size=(5, 6)).astype(np.float32))
    a = softmax(lin(x)).data
    b = softmax(lin(x)).data
    assert np.array_equal(a, b)


# -- structural ops ----------------------------------------------------------------

def test_reduce_max_routes_gradient_to_argmax():
    x = t64([[1.0, 5.0, 2.0], [7.0, 0.0, 3.0]])
    tensor_sum(reduce_max(x, axis=1)).backward()
    assert np.array_equal(x.grad, np.array([[0, 1, 0], [1, 0, 0]], dtype=np.float64))


def test_reduce_min_first_tie_break():
    x = t64([[2.0, 2.0, 3.0]])
    tensor_sum(reduce_min(x, axis=1)).backward()
    assert np.array_equal(x.grad, np.array([[1, 0, 0]], dtype=np.float64))


def test_segment_max_values_and_gradient():
    x = t64([[1.0, 0.0], [3.0, -1.0], [2.0, 9.0]])
    ids = np.array([0, 0, 2])
    out = segment_max(x, ids, 3)
    assert np.array_equal(out.data, np.array([[3, 0], [0, 0], [2, 9]], dtype=np.float64))
    tensor_sum(out).backward()
    assert np.array_equal(x.grad, np.array([[0, 1], [1, 0], [1, 1]], dtype=np.float64))


def test_gather_concat_slice_gradients():
    rng = np.random.default_rng(23)
    x = t64(rng.normal(size=(6, 3)))
    idx = np.array([[0, 2], [5, 5]])
    w = t64(rng.normal(size=(2, 2, 3)), grad=False)

    def f():
        g = gather_rows(x, idx)
        joined = concat([slice_rows(x, 0, 2), slice_rows(x, 2, 6)], axis=0)
        return tensor_sum(mul(g, w)) + tensor_mean(mul(joined, joined))

    assert grad_check(f, [x]) < 1e-4


def test_transpose_reshape_roundtrip_gradient():
    rng = np.random.default_rng(29)
    x = t64(rng.normal(size=(3, 4)))
    err = grad_check(lambda: tensor_sum(mul(transpose(x), transpose(x))), [x])
    assert err < 1e-4
    y = reshape(x, (4, 3))
    assert y.data.shape == (4, 3)


def test_detach_blocks_gradient():
    x = t64([2.0, 3.0])
    d = x.detach()
    loss = tensor_sum(mul(d, d))
    assert not loss.requires_grad
    y = tensor_sum(mul(x.detach(), x))
    y.backward()
    assert np.array_equal(x.grad, np.array([2.0, 3.0]))  # only the live branch
