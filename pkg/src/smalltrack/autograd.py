"""Minimal reverse-mode autodiff over dense numpy arrays.

Storage is float32 by default (float64 ndarrays are kept as-is so numeric
checks can run entirely in 64-bit). Reductions accumulate in float64 before
casting back. The graph is a tape implied by creation order: ``backward``
visits tracked nodes in exact reverse execution order, which is always a
valid topological order because an op's output is created after its inputs.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "as_tensor",
    "add", "sub", "mul", "div", "neg", "pow_const",
    "exp", "log", "sqrt", "tanh", "sigmoid", "relu", "absval", "clip",
    "matmul", "tensor_sum", "tensor_mean",
    "reduce_max", "reduce_min", "segment_max", "gather_rows",
    "concat", "slice_rows", "reshape", "transpose",
    "softmax", "layer_norm",
    "conv2d", "pixel_shuffle", "pixel_unshuffle",
    "multi_head_attention",
    "grad_check", "zero_grads",
]

_oid_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    """Dense n-d array with optional gradient tracking.

    ``data`` is a flat-compatible row-major ndarray; ``grad`` (same shape)
    is populated by ``backward`` and accumulates across calls until cleared.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_oid")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None
        self._oid = next(_oid_counter)

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no graph link; gradient cannot flow past this point."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every tracked ancestor of this scalar.

        Repeated calls accumulate into existing grads.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        # Gather the tracked subgraph; sorting by creation id descending gives
        # exact reverse execution order (a topological order by construction).
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen or not t.requires_grad:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._oid, reverse=True)

        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = pending.pop(id(node), None)
            if g is None:
                continue  # not on a path to the loss
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(id(parent))
                pending[id(parent)] = pg if prev is None else prev + pg

    # -- operator sugar --------------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        if isinstance(key, slice):
            start, stop, step = key.indices(self.shape[0])
            if step != 1:
                raise ShapeError("only contiguous row slices are supported")
            return slice_rows(self, start, stop)
        raise TypeError("Tensor indexing supports contiguous row slices only")

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ----------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape),
                               _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    return _from_op(a.data / b.data, (a, b),
                    lambda g: (_unbroadcast(g / b.data, a.shape),
                               _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _from_op(-a.data, (a,), lambda g: (-g,))


def pow_const(a: Tensor, p: float) -> Tensor:
    return _from_op(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _from_op(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _from_op(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _from_op(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to stay overflow-free at large |x|.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    return _from_op(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a: Tensor) -> Tensor:
    return _from_op(np.maximum(a.data, 0), (a,),
                    lambda g: (g * (a.data > 0),))


def absval(a: Tensor) -> Tensor:
    return _from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    # Zero gradient outside the open interval (lo, hi).
    return _from_op(np.clip(a.data, lo, hi), (a,),
                    lambda g: (g * ((a.data > lo) & (a.data < hi)),))


# -- linear algebra --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _from_op(a.data @ b.data, (a, b),
                    lambda g: (g @ b.data.T, a.data.T @ g))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g.reshape((1,) * a.ndim), a.shape).astype(a.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(a.dtype),)

    return _from_op(out_data, (a,), vjp)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def _axis_reduce(a: Tensor, axis: int, pick):
    """Shared max/min reduction; gradient flows to the first extremal entry."""
    arg = pick(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _from_op(out_data, (a,), vjp)


def reduce_max(a: Tensor, axis: int) -> Tensor:
    return _axis_reduce(a, axis, np.argmax)


def reduce_min(a: Tensor, axis: int) -> Tensor:
    return _axis_reduce(a, axis, np.argmin)


def segment_max(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment channel-wise max of row features; empty segments are zero.

    ``a`` is [N, C]; ``segment_ids`` maps each row to a segment in
    [0, num_segments). Gradient reaches only the first max contributor per
    (segment, channel).
    """
    if a.ndim != 2 or segment_ids.shape != (a.shape[0],):
        raise ShapeError(f"segment_max expects [N,C] rows and N ids, got {a.shape}")
    order = np.argsort(segment_ids, kind="stable")
    sorted_ids = segment_ids[order]
    out_data = np.zeros((num_segments, a.shape[1]), dtype=a.dtype)
    # winners[s, c] = row index of the max contributor, -1 when empty
    winners = np.full((num_segments, a.shape[1]), -1, dtype=np.int64)
    bounds = np.searchsorted(sorted_ids, np.arange(num_segments + 1))
    for s in range(num_segments):
        lo, hi = bounds[s], bounds[s + 1]
        if lo == hi:
            continue
        rows = order[lo:hi]
        block = a.data[rows]
        arg = np.argmax(block, axis=0)
        out_data[s] = block[arg, np.arange(a.shape[1])]
        winners[s] = rows[arg]

    def vjp(g):
        ga = np.zeros_like(a.data)
        occupied = winners >= 0
        seg_idx, ch_idx = np.nonzero(occupied)
        np.add.at(ga, (winners[seg_idx, ch_idx], ch_idx), g[seg_idx, ch_idx])
        return (ga,)

    return _from_op(out_data, (a,), vjp)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Fancy row gather: output shape = index.shape + a.shape[1:]."""
    index = np.asarray(index)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _from_op(a.data[index], (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _from_op(out_data, tensors, vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)

    return _from_op(a.data[start:stop], (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


# -- normalizations ----------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last dimension."""
    if a.shape[-1] < 1:
        raise ShapeError("softmax requires last extent >= 1")
    # Shift by the row max (constant wrt gradient: softmax is shift-invariant).
    shifted = sub(a, Tensor(np.max(a.data, axis=-1, keepdims=True)))
    e = exp(shifted)
    return div(e, tensor_sum(e, axis=-1, keepdims=True))


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean, unit variance (no affine)."""
    if a.shape[-1] < 1:
        raise ShapeError("layer_norm requires last extent >= 1")
    mu = tensor_mean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = tensor_mean(mul(centered, centered), axis=-1, keepdims=True)
    return div(centered, sqrt(add(var, Tensor(np.asarray(eps, dtype=a.dtype)))))


# -- structured ops -----------------------------------------------------------

def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """Same-padded stride-1 cross-correlation: [H,W,Ci] x [k,k,Ci,Co] -> [H,W,Co]."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects [H,W,Ci] and [k,k,Ci,Co], got {x.shape} and {kernels.shape}")
    kh, kw, ci, co = kernels.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square with odd extent, got {kh}x{kw}")
    if x.shape[2] != ci:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[2]}, kernels expect {ci}")
    h, w, _ = x.shape
    pad = kh // 2
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    cols = win.transpose(0, 1, 3, 4, 2).reshape(h * w, kh * kw * ci)  # (di, dj, ci) order
    kmat = kernels.data.reshape(kh * kw * ci, co)
    out_data = (cols @ kmat).reshape(h, w, co)

    def vjp(g):
        gflat = g.reshape(h * w, co)
        gk = (cols.T @ gflat).reshape(kernels.shape)
        gcols = (gflat @ kmat.T).reshape(h, w, kh, kw, ci)
        gxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                gxp[di:di + h, dj:dj + w, :] += gcols[:, :, di, dj, :]
        return (gxp[pad:pad + h, pad:pad + w, :], gk)

    return _from_op(out_data, (x, kernels), vjp)


def pixel_shuffle(x: Tensor, upscale: int = 2) -> Tensor:
    """Rearrange [H,W,C] -> [uH,uW,C/u^2]: channel group g of pixel (i,j)
    lands at output pixel (u*i + g//u, u*j + g%u). Pure rearrangement."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_shuffle expects [H,W,C], got {x.shape}")
    h, w, c = x.shape
    u = upscale
    if c % (u * u) != 0:
        raise ShapeError(f"pixel_shuffle needs channels divisible by {u * u}, got {c}")
    cg = c // (u * u)
    out_data = x.data.reshape(h, w, u, u, cg).transpose(0, 2, 1, 3, 4).reshape(h * u, w * u, cg)

    def vjp(g):
        return (g.reshape(h, u, w, u, cg).transpose(0, 2, 1, 3, 4).reshape(h, w, c),)

    return _from_op(out_data, (x,), vjp)


def pixel_unshuffle(x: Tensor, upscale: int = 2) -> Tensor:
    """Exact inverse of ``pixel_shuffle``."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_unshuffle expects [H,W,C], got {x.shape}")
    hu, wu, cg = x.shape
    u = upscale
    if hu % u or wu % u:
        raise ShapeError(f"pixel_unshuffle needs spatial extents divisible by {u}, got {x.shape}")
    h, w = hu // u, wu // u
    out_data = x.data.reshape(h, u, w, u, cg).transpose(0, 2, 1, 3, 4).reshape(h, w, cg * u * u)

    def vjp(g):
        return (g.reshape(h, w, u, u, cg).transpose(0, 2, 1, 3, 4).reshape(hu, wu, cg),)

    return _from_op(out_data, (x,), vjp)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention on already-projected tokens.

    Splits the channel dim into ``heads``, runs softmax(QK^T/sqrt(dh))V per
    head and concatenates. Projections live in nn.MultiHeadAttention.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention expects 2-d token matrices")
    c = q.shape[1]
    if c % heads != 0:
        raise ShapeError(f"channel dim {c} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[1] != c:
        raise ShapeError(f"key/value shapes {k.shape}/{v.shape} do not match query dim {c}")
    dh = c // heads
    scale = Tensor(np.asarray(1.0 / np.sqrt(dh), dtype=q.dtype))
    outs = []
    for hd in range(heads):
        qh = slice_cols(q, hd * dh, (hd + 1) * dh)
        kh = slice_cols(k, hd * dh, (hd + 1) * dh)
        vh = slice_cols(v, hd * dh, (hd + 1) * dh)
        att = softmax(mul(matmul(qh, transpose(kh)), scale))
        outs.append(matmul(att, vh))
    return concat(outs, axis=1)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _from_op(a.data[:, start:stop], (a,), vjp)


# -- checking ------------------------------------------------------------------

def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[], Tensor], wiggle: Sequence[Tensor], step: float = 1e-3) -> float:
    """Compare analytic grads of scalar ``f()`` against central differences.

    ``f`` must be deterministic and rebuild its graph from the current data of
    the tensors in ``wiggle``, which are perturbed in place. All inputs must
    be float64 so the whole check runs in 64-bit. Returns the max over
    elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    wiggle = list(wiggle)
    for t in wiggle:
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 tensors")
    zero_grads(wiggle)
    loss = f()
    if loss.size != 1:
        raise ShapeError(f"grad_check requires a scalar function, got shape {loss.shape}")
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wiggle]

    worst = 0.0
    for t, ga in zip(wiggle, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f().item()
            flat[i] = orig - step
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric))
            worst = max(worst, err)
    return worst
