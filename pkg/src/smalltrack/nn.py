"""Parameterized layers on top of the autograd engine."""

from __future__ import annotations

import numpy as np

from .autograd import (
    Tensor, add, concat, layer_norm, matmul, mul, multi_head_attention, relu,
)

__all__ = ["Module", "Linear", "LayerNorm", "MultiHeadAttention", "AttentionBlock",
           "glorot_uniform"]


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Container of parameters and sub-modules; names follow attribute paths."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect(self, "", out)
        return out

    @staticmethod
    def _collect(obj: "Module", prefix: str, out: dict[str, Tensor]) -> None:
        for name, val in vars(obj).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + name] = val
            elif isinstance(val, Module):
                Module._collect(val, f"{prefix}{name}.", out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        Module._collect(item, f"{prefix}{name}.{i}.", out)
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{prefix}{name}.{i}"] = item

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"parameter {name} shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.dtype)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        self.w = Tensor(glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        return add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    """Last-dim normalization with learned gain and bias."""

    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layer_norm(x, self.eps), self.gain), self.bias)


class MultiHeadAttention(Module):
    """q/k/v/out projections around scaled dot-product attention."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.wq = Linear(dim, dim, rng, dtype)
        # a key bias shifts every softmax row uniformly and cancels exactly
        self.wk = Linear(dim, dim, rng, dtype, bias=False)
        self.wv = Linear(dim, dim, rng, dtype)
        self.wo = Linear(dim, dim, rng, dtype)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        mixed = multi_head_attention(self.wq(q), self.wk(k), self.wv(v), self.heads)
        return self.wo(mixed)


class AttentionBlock(Module):
    """Pre-layernorm attention block: residual MHA, then residual C->4C->C MLP.

    ``context`` switches to cross-attention (keys/values from context tokens,
    normalized by their own layernorm).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        self.ln_q = LayerNorm(dim, dtype)
        self.ln_kv = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype)
        self.ln_ff = LayerNorm(dim, dtype)
        self.ff1 = Linear(dim, 4 * dim, rng, dtype)
        self.ff2 = Linear(4 * dim, dim, rng, dtype)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        h = self.ln_q(x)
        c = h if context is None else self.ln_kv(context)
        x = add(x, self.attn(h, c, c))
        x = add(x, self.ff2(relu(self.ff1(self.ln_ff(x)))))
        return x
