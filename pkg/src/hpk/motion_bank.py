"""Motion memory bank: learnable memories attend over intensity-conditioned motion features."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .nn import MLP, Linear, Module, MultiHeadCrossAttention, param
from .numeric import Tensor


@dataclass(frozen=True)
class BankConfig:
    count: int = 64
    width: int = 768
    heads: int = 8
    blocks: int = 6
    cond_dim: int = 768
    mlp_ratio: int = 4
    # "variance": N(0, σ² = 1/√dim); "std": σ = 1/√dim
    init_convention: str = "variance"
    eps: float = 1e-5

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"bank width {self.width} not divisible by {self.heads} heads")
        if min(self.count, self.width, self.blocks, self.cond_dim) < 1:
            raise ValueError("bank dimensions must be positive")
        if self.cond_dim != self.width:
            # E_s is broadcast-added onto every feature token
            raise ValueError(f"cond_dim {self.cond_dim} must equal width {self.width}")
        if self.init_convention not in ("variance", "std"):
            raise ValueError(f"unknown init convention {self.init_convention!r}")

    def to_json(self) -> dict:
        return asdict(self)


def init_memories(count: int = 64, dim: int = 768, seed: int = 0,
                  convention: str = "variance") -> np.ndarray:
    if count < 1 or dim < 1:
        raise ValueError("count and dim must be positive")
    std = dim ** -0.25 if convention == "variance" else dim ** -0.5
    return np.random.default_rng(seed).normal(0.0, std, size=(count, dim))


class AdaLN(Module):
    """(1 + Δγ(c)) ⊙ LayerNorm(x) + β(c), with both maps zero-initialized."""

    def __init__(self, width: int, cond_dim: int, eps: float = 1e-5):
        self.to_scale = Linear(cond_dim, width, zero=True)
        self.to_shift = Linear(cond_dim, width, zero=True)
        self.eps = eps

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        return adaln(x, cond, self)


def adaln(x: Tensor, cond: Tensor, params: AdaLN) -> Tensor:
    if cond.shape != (params.to_scale.in_dim,):
        raise nm.DimensionError(
            f"AdaLN conditioning width {cond.shape} != ({params.to_scale.in_dim},)")
    c = cond.reshape(1, -1)
    gamma = params.to_scale(c).reshape(-1)
    beta = params.to_shift(c).reshape(-1)
    return nm.layer_norm(x, params.eps) * (gamma + 1.0) + beta


class BankBlock(Module):
    def __init__(self, cfg: BankConfig, rng: np.random.Generator):
        self.norm_in = AdaLN(cfg.width, cfg.cond_dim, cfg.eps)
        self.attn = MultiHeadCrossAttention(cfg.width, cfg.width, cfg.width, cfg.heads, rng)
        self.norm_out = AdaLN(cfg.width, cfg.cond_dim, cfg.eps)
        self.mlp = MLP(cfg.width, cfg.width * cfg.mlp_ratio, rng)

    def __call__(self, features: Tensor, cond: Tensor, memories: Tensor) -> Tensor:
        f_hat = self.norm_in(features + cond, cond)
        f_bar = self.attn(memories, f_hat, f_hat)
        f_bar = self.norm_out(f_bar, cond)
        return self.mlp(f_bar)


class MemoryBank(Module):
    def __init__(self, cfg: BankConfig = BankConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.memories = param(init_memories(cfg.count, cfg.width, seed, cfg.init_convention))
        self.blocks = [BankBlock(cfg, rng) for _ in range(cfg.blocks)]

    def __call__(self, features: Tensor, cond: Tensor) -> Tensor:
        return memory_bank_forward(features, cond, self)


def memory_bank_forward(features: Tensor, cond: Tensor, bank: MemoryBank) -> Tensor:
    """Refine n×width motion features into count×width tokens.

    Blocks run in sequence, each consuming the previous block's memory
    tokens as its features; the memories themselves are shared.
    """
    cfg = bank.cfg
    if features.data.ndim != 2 or features.shape[1] != cfg.width:
        raise nm.DimensionError(f"motion features must be n×{cfg.width}, got {features.shape}")
    if cond.shape != (cfg.cond_dim,):
        raise nm.DimensionError(f"intensity embedding must have shape ({cfg.cond_dim},), got {cond.shape}")
    x = features
    for block in bank.blocks:
        x = block(x, cond, bank.memories)
    return x
