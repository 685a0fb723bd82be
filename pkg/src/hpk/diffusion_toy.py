"""Desk-scale latent diffusion: noising, ε-prediction loss, CFG and DDIM."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .nn import MLP, Linear, Module, MultiHeadCrossAttention, param
from .numeric import Tensor


@dataclass(frozen=True)
class ToyConfig:
    latent_shape: tuple[int, int, int] = (8, 8, 4)  # H × W × channels
    width: int = 64
    heads: int = 4
    blocks: int = 2
    appearance_dim: int = 1024
    motion_dim: int = 768
    timesteps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    cfg_scale: float = 2.0
    lr: float = 2e-3
    weight_decay: float = 0.0
    grad_clip: float = 0.99
    cond_drop: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "latent_shape", tuple(int(v) for v in self.latent_shape))
        if self.width % self.heads:
            raise ValueError(f"toy width {self.width} not divisible by {self.heads} heads")
        if len(self.latent_shape) != 3:
            raise ValueError("latent_shape must be (H, W, C)")

    @property
    def tokens(self) -> int:
        return self.latent_shape[0] * self.latent_shape[1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["latent_shape"] = list(self.latent_shape)
        return d


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or not np.all((betas > 0) & (betas < 1)):
            raise ValueError("betas must be a 1-D array in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - betas))

    @classmethod
    def linear(cls, timesteps: int = 50, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, timesteps))

    @property
    def T(self) -> int:
        return len(self.betas)

    def ab(self, t: int) -> float:
        """ᾱ_t, with ᾱ_{-1} = 1 standing for the clean sample."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.T:
            raise ValueError(f"timestep {t} outside [0, {self.T})")
        return float(self.alpha_bar[t])


def noising(z, eps, t: int, sched: NoiseSchedule):
    """√ᾱ_t z + √(1 − ᾱ_t) ε; works on arrays and taped tensors alike."""
    zs, es = np.shape(z.data if isinstance(z, Tensor) else z), np.shape(eps.data if isinstance(eps, Tensor) else eps)
    if zs != es:
        raise nm.DimensionError(f"latent {zs} and noise {es} shapes differ")
    a = sched.ab(t)
    return math.sqrt(a) * z + math.sqrt(1.0 - a) * eps


def cfg_combine(eps_cond, eps_uncond, w: float = 2.0):
    if np.shape(eps_cond) != np.shape(eps_uncond):
        raise nm.DimensionError(f"guidance branches differ: {np.shape(eps_cond)} vs {np.shape(eps_uncond)}")
    # ε_u + w(ε_c − ε_u), arranged so w = 0 and w = 1 return a branch bit-exactly
    return w * eps_cond + (1.0 - w) * eps_uncond


def ddim_step(x_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (η = 0) DDIM update; t_prev = -1 returns the x0 estimate."""
    if not t_prev < t:
        raise ValueError(f"t_prev ({t_prev}) must precede t ({t})")
    a_t, a_prev = sched.ab(t), sched.ab(t_prev)
    x0 = (x_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0 + math.sqrt(1.0 - a_prev) * eps_hat


def timestep_features(t: int, dim: int, timesteps: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = (t / timesteps) * 1000.0 * freqs
    feats = np.concatenate([np.sin(ang), np.cos(ang)])
    return np.pad(feats, (0, dim - feats.size))


@dataclass
class ConditionBundle:
    appearance: Tensor
    motion: Tensor
    spatial: Tensor | None = None


def condition_pack(appearance: Tensor, motion_refined: Tensor, motion_frames: Tensor,
                   spatial: Tensor | None, cfg: ToyConfig) -> ConditionBundle:
    """Route appearance and motion tokens to their attention branches.

    Motion cross-attention sees per-frame tokens followed by the refined
    memory tokens; the spatial map is added to the latent tokens.
    """
    if appearance.data.ndim != 2 or appearance.shape[1] != cfg.appearance_dim:
        raise nm.DimensionError(f"appearance tokens must be t×{cfg.appearance_dim}, got {appearance.shape}")
    for name, m in (("refined", motion_refined), ("per-frame", motion_frames)):
        if m.data.ndim != 2 or m.shape[1] != cfg.motion_dim:
            raise nm.DimensionError(f"{name} motion tokens must be ×{cfg.motion_dim}, got {m.shape}")
    if spatial is not None and spatial.shape != (cfg.tokens, cfg.width):
        raise nm.DimensionError(f"spatial map must be {(cfg.tokens, cfg.width)}, got {spatial.shape}")
    return ConditionBundle(appearance, nm.concat([motion_frames, motion_refined], axis=0), spatial)


class DenoiserBlock(Module):
    def __init__(self, cfg: ToyConfig, rng: np.random.Generator):
        w = cfg.width
        self.self_attn = MultiHeadCrossAttention(w, w, w, cfg.heads, rng)
        self.app_attn = MultiHeadCrossAttention(w, cfg.appearance_dim, w, cfg.heads, rng)
        self.motion_attn = MultiHeadCrossAttention(w, cfg.motion_dim, w, cfg.heads, rng)
        self.mlp = MLP(w, 4 * w, rng)

    def __call__(self, x: Tensor, cond: ConditionBundle) -> Tensor:
        h = nm.layer_norm(x)
        x = x + self.self_attn(h, h, h)
        x = x + self.app_attn(nm.layer_norm(x), cond.appearance)
        x = x + self.motion_attn(nm.layer_norm(x), cond.motion)
        return x + self.mlp(nm.layer_norm(x))


class ToyDenoiser(Module):
    """Token transformer standing in for the video UNet; predicts ε."""

    def __init__(self, cfg: ToyConfig = ToyConfig(), seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.latent_shape[2]
        self.inp = Linear(c, cfg.width, rng)
        self.pos = param(rng.normal(0.0, 0.02, size=(cfg.tokens, cfg.width)))
        self.time_mlp = MLP(cfg.width, cfg.width, rng)
        self.blocks = [DenoiserBlock(cfg, rng) for _ in range(cfg.blocks)]
        self.out = Linear(cfg.width, c, rng)
        self.null_appearance = param(rng.normal(0.0, 0.02, size=(1, cfg.appearance_dim)))
        self.null_motion = param(rng.normal(0.0, 0.02, size=(1, cfg.motion_dim)))

    def null_condition(self, spatial: Tensor | None = None) -> ConditionBundle:
        return ConditionBundle(self.null_appearance, self.null_motion, spatial)

    def __call__(self, x_t, cond: ConditionBundle, t: int) -> Tensor:
        cfg = self.cfg
        x = nm.as_tensor(x_t)
        if x.shape != cfg.latent_shape:
            raise nm.DimensionError(f"latent must be {cfg.latent_shape}, got {x.shape}")
        h = self.inp(x.reshape(cfg.tokens, cfg.latent_shape[2])) + self.pos
        if cond.spatial is not None:
            h = h + cond.spatial
        temb = self.time_mlp(Tensor(timestep_features(t, cfg.width, cfg.timesteps)).reshape(1, -1))
        h = h + temb.reshape(-1)
        for block in self.blocks:
            h = block(h, cond)
        return self.out(nm.layer_norm(h)).reshape(cfg.latent_shape)


def diffusion_loss(z, cond: ConditionBundle, t: int, sched: NoiseSchedule, model, seed) -> Tensor:
    """Mean squared error between drawn noise and the model's prediction.

    ``model`` is any callable (x_t, cond, t) -> Tensor; ``z`` may be a taped
    tensor so gradients reach whatever produced it.
    """
    z = nm.as_tensor(z)
    eps = np.random.default_rng(seed).standard_normal(z.shape)
    x_t = noising(z, Tensor(eps), t, sched)
    diff = nm.as_tensor(model(x_t, cond, t)) - Tensor(eps)
    return nm.mean(diff * diff)


def predict_eps(model: ToyDenoiser, x: np.ndarray, cond: ConditionBundle, t: int,
                w: float, uncond: ConditionBundle | None = None) -> np.ndarray:
    eps_c = model(x, cond, t).data
    if w == 1.0:
        return eps_c
    uncond = uncond or model.null_condition(cond.spatial)
    return cfg_combine(eps_c, model(x, uncond, t).data, w)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    return sorted({int(round(v)) for v in np.linspace(T - 1, 0, steps)}, reverse=True)


def ddim_sample(model: ToyDenoiser, cond: ConditionBundle, sched: NoiseSchedule, steps: int = 10,
                w: float = 2.0, seed: int = 0) -> np.ndarray:
    """Run a deterministic trajectory; returns (steps + 1) stacked latents."""
    x = np.random.default_rng(seed).standard_normal(model.cfg.latent_shape)
    ts = ddim_timesteps(sched.T, steps)
    traj = [x]
    for t, t_prev in zip(ts, ts[1:] + [-1]):
        x = ddim_step(x, predict_eps(model, x, cond, t, w), t, t_prev, sched)
        traj.append(x)
    return np.stack(traj)


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            new = p.data * (1 - self.lr * self.wd) - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.assign(new)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class TrainSample:
    latent: np.ndarray
    cond: ConditionBundle


def evaluation_loss(model: ToyDenoiser, data: list[TrainSample], sched: NoiseSchedule,
                    draws: int = 16, seed: int = 1234) -> float:
    """Average loss over a fixed set of (sample, t, ε) draws."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(draws):
        for s in data:
            t = int(rng.integers(0, sched.T))
            total += diffusion_loss(Tensor(s.latent), s.cond, t, sched, model,
                                    int(rng.integers(2 ** 31))).item()
    return total / (draws * len(data))


def train_toy(model: ToyDenoiser, data: list[TrainSample], steps: int = 200, seed: int = 7,
              eval_draws: int = 16) -> dict:
    """Fixed-seed training loop over the whole (tiny) dataset each step."""
    cfg = model.cfg
    sched = NoiseSchedule.linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(seed)
    history = {"eval_initial": evaluation_loss(model, data, sched, eval_draws), "train": [], "clip": []}
    for _ in range(steps):
        opt.zero_grad()
        loss = None
        for s in data:
            t = int(rng.integers(0, sched.T))
            cond = s.cond
            if rng.random() < cfg.cond_drop:
                cond = model.null_condition(s.cond.spatial)
            term = diffusion_loss(Tensor(s.latent), cond, t, sched, model, int(rng.integers(2 ** 31)))
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / len(data))
        nm.backward(loss)
        history["clip"].append(nm.clip_grad_norm(params, cfg.grad_clip))
        opt.step()
        history["train"].append(loss.item())
    history["eval_final"] = evaluation_loss(model, data, sched, eval_draws)
    return history
