"""Deterministic synthetic fixtures: an 8-frame face clip and a 2-sample training set."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .diffusion_toy import ConditionBundle, ToyConfig, TrainSample, condition_pack
from .io import write_tensor
from .landmarks import LandmarkSequence, motion_intensity, IntensityEmbedding
from .motion_bank import BankConfig, MemoryBank
from .numeric import Tensor

# 16-point layout: brows 0-5, eyes 6-9, nose tip 10, mouth 11-15
INDEX_MAP = {
    "eyebrows": [0, 1, 2, 3, 4, 5],
    "eyes": [6, 7, 8, 9],
    "nose": [10],
    "mouth": [11, 12, 13, 14, 15],
}
NOSE = 10

_BASE_FACE = np.array([
    [-40, -40], [-28, -46], [-14, -42], [14, -42], [28, -46], [40, -40],
    [-28, -28], [-16, -28], [16, -28], [28, -28],
    [0, 0],
    [-22, 28], [-8, 24], [8, 24], [22, 28], [0, 38],
], dtype=np.float64)


def synthetic_landmarks(n: int = 8, seed: int = 0, center=(128.0, 128.0)) -> LandmarkSequence:
    """Face that nods sideways and opens its mouth over n frames."""
    rng = np.random.default_rng(seed)
    phase = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    frames = []
    for k in range(n):
        pts = _BASE_FACE.copy()
        pts[11:, 1] += 6.0 * (1 + np.sin(phase[k])) * (pts[11:, 1] > 30)
        pts[0:6, 1] -= 2.0 * np.cos(phase[k])
        pts += np.array(center) + np.array([10.0 * np.sin(phase[k]), 4.0 * np.cos(phase[k])])
        pts += rng.normal(0.0, 0.3, size=pts.shape)
        frames.append(pts)
    return LandmarkSequence(np.stack(frames), fps=25.0, center_index=NOSE, index_map=dict(INDEX_MAP))


def _latent(rng: np.random.Generator, shape=(8, 8, 4)) -> np.ndarray:
    h, w, c = shape
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    chans = []
    for _ in range(c):
        fx, fy, ph = rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
        chans.append(np.sin(2 * np.pi * (fx * xx + fy * yy) + ph))
    return np.stack(chans, axis=-1)


def training_pair(cfg: ToyConfig = ToyConfig(), seed: int = 7,
                  bank_cfg: BankConfig | None = None) -> list[TrainSample]:
    """Two (latent, conditioning) samples; refined motion comes from a seeded bank."""
    rng = np.random.default_rng(seed)
    bank_cfg = bank_cfg or BankConfig(width=cfg.motion_dim, cond_dim=cfg.motion_dim)
    bank = MemoryBank(bank_cfg, seed=seed)
    emb = IntensityEmbedding(dim=cfg.motion_dim // 2, seed=seed)
    samples = []
    for i in range(2):
        seq = synthetic_landmarks(8, seed=seed + i)
        mi = motion_intensity(seq)
        e_s = emb(mi.expression_level, mi.head_level)
        frames = Tensor(rng.normal(0.0, 1.0, size=(seq.n, cfg.motion_dim)))
        refined = Tensor(bank(frames, e_s.detach()).data)
        appearance = Tensor(rng.normal(0.0, 1.0, size=(4, cfg.appearance_dim)))
        cond = condition_pack(appearance, refined, frames, None, cfg)
        samples.append(TrainSample(_latent(rng, cfg.latent_shape), cond))
    return samples


def write_pipeline_fixture(out_dir, seed: int = 0) -> Path:
    """Write the 8-frame clip, stand-in encoder features and a pipeline config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    seq = synthetic_landmarks(8, seed=seed)
    (out / "landmarks.json").write_text(json.dumps(seq.to_json()))
    generated = LandmarkSequence(seq.frames + rng.normal(0.0, 0.5, size=seq.frames.shape),
                                 seq.fps, seq.center_index, seq.index_map)
    (out / "landmarks_generated.json").write_text(json.dumps(generated.to_json()))
    write_tensor(out / "motion_features.hpt", rng.normal(0.0, 1.0, size=(seq.n, 768)))
    write_tensor(out / "appearance.hpt", rng.normal(0.0, 1.0, size=(16, 1024)))
    write_tensor(out / "id.hpt", rng.normal(0.0, 1.0, size=(1, 512)))
    write_tensor(out / "target_latent.hpt", _latent(rng))
    config = {
        "landmarks": "landmarks.json",
        "landmarks_generated": "landmarks_generated.json",
        "motion_features": "motion_features.hpt",
        "appearance": "appearance.hpt",
        "appearance_grid": [4, 4],
        "id_features": "id.hpt",
        "target_latent": "target_latent.hpt",
        "frame_size": [256, 256],
        "crop_margin": 0.1,
        "intensity": {"range": [0.0, 1.0], "levels": 64},
        "seeds": {"embedding": 1, "bank": 2, "adapter": 3, "denoiser": 4, "train": 5, "sample": 6},
        "toy": {"train_steps": 20, "sample_steps": 10, "cfg_scale": 2.0},
    }
    path = out / "pipeline.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True))
    return path
