"""Parameter containers and the layers shared by the conditioning blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numeric as nm
from .numeric import Tensor


class Module:
    """Attribute-walking parameter registry, torch style."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            p.assign(state[name])

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _walk(value, name: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def param(values) -> Tensor:
    return Tensor(values, requires_grad=True)


class Linear(Module):
    """y = x W + b with W stored as in×out."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 bias: bool = True, zero: bool = False):
        if zero or rng is None:
            w = np.zeros((in_dim, out_dim))
        else:
            w = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(in_dim, out_dim))
        self.weight = param(w)
        self.bias = param(np.zeros(out_dim)) if bias else None
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise nm.DimensionError(f"Linear expects width {self.in_dim}, got {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    activation = staticmethod(nm.silu)

    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, out_dim: int | None = None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.activation(self.fc1(x)))


class MultiHeadCrossAttention(Module):
    """Scaled dot-product attention with per-head column slices.

    Queries and keys/values may have different widths; both are projected
    to ``width`` which must split evenly over ``heads``.
    """

    def __init__(self, query_dim: int, kv_dim: int, width: int, heads: int,
                 rng: np.random.Generator, out_dim: int | None = None):
        if width % heads:
            raise ValueError(f"attention width {width} not divisible by {heads} heads")
        self.heads = heads
        self.width = width
        self.to_q = Linear(query_dim, width, rng)
        self.to_k = Linear(kv_dim, width, rng)
        self.to_v = Linear(kv_dim, width, rng)
        self.to_out = Linear(width, out_dim or width, rng)

    def attend(self, query: Tensor, key: Tensor, value: Tensor | None = None) -> Tensor:
        """Concatenated head outputs before the output projection."""
        value = key if value is None else value
        if key.shape[0] != value.shape[0]:
            raise nm.DimensionError(f"key/value token counts differ: {key.shape} vs {value.shape}")
        q, k, v = self.to_q(query), self.to_k(key), self.to_v(value)
        dh = self.width // self.heads
        scale = 1.0 / math.sqrt(dh)
        outs = []
        for h in range(self.heads):
            cols = slice(h * dh, (h + 1) * dh)
            scores = (q[:, cols] @ k[:, cols].T) * scale
            outs.append(nm.softmax(scores, axis=1) @ v[:, cols])
        return outs[0] if len(outs) == 1 else nm.concat(outs, axis=1)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor | None = None) -> Tensor:
        return self.to_out(self.attend(query, key, value))


def mhca(query: Tensor, key_value: Tensor, attn: MultiHeadCrossAttention) -> Tensor:
    """Cross-attention where one token set supplies both keys and values."""
    return attn(query, key_value, key_value)
