"""ID-aware multi-scale adapter over patch-level appearance tokens."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .nn import Linear, Module, MultiHeadCrossAttention, param
from .numeric import Tensor

REFERENCE = "reference"


@dataclass(frozen=True)
class AdapterConfig:
    appearance_dim: int = 1024
    id_dim: int = 512
    rank: int = 384
    kernels: tuple[int, ...] = (1, 3, 5)
    heads: int = 8

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        if any(k < 1 or k % 2 == 0 for k in self.kernels):
            raise ValueError(f"kernel sizes must be odd, got {self.kernels}")
        if self.rank % self.heads:
            raise ValueError(f"rank {self.rank} not divisible by {self.heads} heads")

    @property
    def branch_width(self) -> int:
        return self.rank * len(self.kernels)

    def to_json(self) -> dict:
        d = asdict(self)
        d["kernels"] = list(self.kernels)
        return d


@dataclass
class PatchGrid:
    tokens: Tensor  # (H'·W') × C, row-major over the grid
    height: int
    width: int

    def __post_init__(self):
        if self.tokens.data.ndim != 2 or self.tokens.shape[0] != self.height * self.width:
            raise nm.DimensionError(
                f"{self.tokens.shape[0]} tokens do not fill a {self.height}×{self.width} grid")


class MultiScaleConv(Module):
    def __init__(self, rank: int, kernels: tuple[int, ...], rng: np.random.Generator):
        self.kernels = [param(rng.normal(0.0, 1.0 / np.sqrt(rank * k * k), size=(rank, rank, k, k)))
                        for k in kernels]
        self.biases = [param(np.zeros(rank)) for _ in kernels]

    def __call__(self, grid: PatchGrid) -> Tensor:
        return mconv(grid, self)


def mconv(grid: PatchGrid, conv: MultiScaleConv) -> Tensor:
    """Parallel same-size convolutions, concatenated along channels, as tokens."""
    t, c = grid.tokens.shape
    fmap = grid.tokens.T.reshape(c, grid.height, grid.width)
    branches = [nm.conv2d(fmap, k, b) for k, b in zip(conv.kernels, conv.biases)]
    stacked = nm.concat(branches, axis=0)
    return stacked.reshape(stacked.shape[0], t).T


class IMAdapter(Module):
    def __init__(self, cfg: AdapterConfig = AdapterConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.down = Linear(cfg.appearance_dim, cfg.rank, rng)
        self.mconv = MultiScaleConv(cfg.rank, cfg.kernels, rng)
        self.kv = Linear(cfg.branch_width, cfg.rank, rng)
        self.id_attn = MultiHeadCrossAttention(cfg.id_dim, cfg.rank, cfg.rank, cfg.heads, rng)
        # patch tokens query the fused ID tokens to bring the result back per patch
        self.scatter_attn = MultiHeadCrossAttention(cfg.rank, cfg.rank, cfg.rank, cfg.heads, rng)
        self.up = Linear(cfg.rank, cfg.appearance_dim, zero=True)

    def __call__(self, appearance: PatchGrid, id_features: Tensor) -> PatchGrid:
        return imadapter_forward(appearance, id_features, self)


def imadapter_forward(appearance: PatchGrid, id_features: Tensor, adapter: IMAdapter) -> PatchGrid:
    cfg = adapter.cfg
    f_a = appearance.tokens
    if f_a.shape[1] != cfg.appearance_dim:
        raise nm.DimensionError(f"appearance width {f_a.shape[1]} != {cfg.appearance_dim}")
    if id_features.data.ndim != 2 or id_features.shape[1] != cfg.id_dim:
        raise nm.DimensionError(f"ID features must be i×{cfg.id_dim}, got {id_features.shape}")
    low = adapter.down(f_a)
    fused = adapter.mconv(PatchGrid(low, appearance.height, appearance.width))
    kv = adapter.kv(fused)
    id_tokens = adapter.id_attn(id_features, kv, kv)
    per_patch = adapter.scatter_attn(low, id_tokens, id_tokens)
    return PatchGrid(f_a + adapter.up(per_patch), appearance.height, appearance.width)


def sample_id_source(mode: str, n: int = 1, seed: int | None = None):
    """Frame index to draw ID features from (train) or the reference flag (infer)."""
    if mode == "infer":
        return REFERENCE
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if n < 1:
        raise ValueError("clip length must be at least 1")
    return int(np.random.default_rng(seed).integers(0, n))
