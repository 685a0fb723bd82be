"""End-to-end desk pipeline: landmarks → intensity → bank → adapter → toy sampling → metrics."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .diffusion_toy import (NoiseSchedule, ToyConfig, ToyDenoiser, TrainSample, condition_pack,
                            ddim_sample, train_toy)
from .imadapter import AdapterConfig, IMAdapter, PatchGrid
from .landmarks import IntensityEmbedding, LandmarkSequence, face_crop_region, motion_intensity
from .metrics import FramePair, frame_report, lmd
from .motion_bank import BankConfig, MemoryBank
from .numeric import Tensor

STAGES = ("config", "landmarks", "crop-region", "intensity", "embedding", "bank-forward",
          "adapter-forward", "condition-pack", "toy-sampling", "metrics")
SEED_KEYS = ("embedding", "bank", "adapter", "denoiser", "train", "sample")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str, validation: bool = False):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.validation = validation


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HPK_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class PipelineConfig:
    root: Path
    raw: dict
    landmarks: Path
    motion_features: Path
    appearance: Path
    appearance_grid: tuple[int, int]
    id_features: Path
    target_latent: Path | None
    landmarks_generated: Path | None
    frame_size: tuple[int, int]
    crop_margin: float
    intensity_range: tuple[float, float]
    levels: int
    seeds: dict[str, int]
    bank: BankConfig
    adapter: AdapterConfig
    toy: ToyConfig
    train_steps: int = 20
    sample_steps: int = 10
    cfg_scale: float = 2.0
    shapes: dict = field(default_factory=dict)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(io.canonical_json(self.raw).encode()).hexdigest()


def _tensor_shape(path: Path, stage: str) -> tuple[int, ...]:
    if not path.is_file():
        raise StageError(stage, f"missing file {path}", validation=True)
    try:
        return io.read_tensor(path).shape
    except io.FormatError as exc:
        raise StageError(stage, f"{path}: {exc}", validation=True) from exc


def load_config(path) -> PipelineConfig:
    """Parse and cross-check a pipeline config before any computation."""
    path = Path(path)
    if not path.is_file():
        raise StageError("config", f"missing config file {path}", validation=True)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise StageError("config", f"invalid JSON: {exc}", validation=True) from exc
    root = path.parent

    def ref(key: str, required: bool = True) -> Path | None:
        if key not in raw:
            if required:
                raise StageError("config", f"missing key {key!r}", validation=True)
            return None
        return (root / raw[key]).resolve()

    landmarks = ref("landmarks")
    if not landmarks.is_file():
        raise StageError("landmarks", f"missing landmark file {landmarks}", validation=True)
    diags = io.validate(landmarks, "landmarks")
    if diags:
        raise StageError("landmarks", "; ".join(diags), validation=True)
    generated = ref("landmarks_generated", required=False)
    if generated is not None:
        diags = io.validate(generated, "landmarks")
        if diags:
            raise StageError("metrics", "; ".join(diags), validation=True)

    toy_raw = dict(raw.get("toy", {}))
    run_keys = {k: toy_raw.pop(k) for k in ("train_steps", "sample_steps", "cfg_scale") if k in toy_raw}
    try:
        bank = BankConfig(**raw.get("bank", {}))
        adapter = AdapterConfig(**raw.get("adapter", {}))
        toy_raw.setdefault("motion_dim", bank.width)
        toy_raw.setdefault("appearance_dim", adapter.appearance_dim)
        toy = ToyConfig(**toy_raw)
    except (TypeError, ValueError) as exc:
        raise StageError("config", str(exc), validation=True) from exc

    problems = []
    if bank.width % 2:
        problems.append(f"bank width {bank.width} must be even to split E_s into two tables")
    if toy.motion_dim != bank.width:
        problems.append(f"toy motion_dim {toy.motion_dim} != bank width {bank.width}")
    if toy.appearance_dim != adapter.appearance_dim:
        problems.append(f"toy appearance_dim {toy.appearance_dim} != adapter appearance_dim "
                        f"{adapter.appearance_dim}")
    grid = tuple(int(v) for v in raw.get("appearance_grid", (0, 0)))
    shapes = {
        "motion_features": _tensor_shape(ref("motion_features"), "bank-forward"),
        "appearance": _tensor_shape(ref("appearance"), "adapter-forward"),
        "id_features": _tensor_shape(ref("id_features"), "adapter-forward"),
    }
    if shapes["motion_features"][1:] != (bank.width,):
        problems.append(f"motion features {shapes['motion_features']} not n×{bank.width}")
    if shapes["appearance"] != (grid[0] * grid[1], adapter.appearance_dim):
        problems.append(f"appearance {shapes['appearance']} does not match grid {grid} × "
                        f"{adapter.appearance_dim}")
    if shapes["id_features"][1:] != (adapter.id_dim,):
        problems.append(f"ID features {shapes['id_features']} not i×{adapter.id_dim}")
    target = ref("target_latent", required=False)
    if target is not None:
        shapes["target_latent"] = _tensor_shape(target, "toy-sampling")
        if shapes["target_latent"] != toy.latent_shape:
            problems.append(f"target latent {shapes['target_latent']} != {toy.latent_shape}")
    seeds = {k: int(raw.get("seeds", {}).get(k, i)) for i, k in enumerate(SEED_KEYS)}
    lo, hi = raw.get("intensity", {}).get("range", [0.0, 1.0])
    levels = int(raw.get("intensity", {}).get("levels", 64))
    if not lo < hi or levels < 2:
        problems.append(f"invalid intensity discretization range={lo, hi} levels={levels}")
    if problems:
        raise StageError("config", "; ".join(problems), validation=True)

    return PipelineConfig(
        root=root, raw=raw, landmarks=landmarks,
        motion_features=ref("motion_features"), appearance=ref("appearance"),
        appearance_grid=grid, id_features=ref("id_features"), target_latent=target,
        landmarks_generated=generated,
        frame_size=tuple(raw.get("frame_size", (256, 256))),
        crop_margin=float(raw.get("crop_margin", 0.0)),
        intensity_range=(float(lo), float(hi)), levels=levels, seeds=seeds,
        bank=bank, adapter=adapter, toy=toy, shapes=shapes,
        train_steps=int(run_keys.get("train_steps", 20)),
        sample_steps=int(run_keys.get("sample_steps", 10)),
        cfg_scale=float(run_keys.get("cfg_scale", toy.cfg_scale)),
    )


def pseudo_decode(latent: np.ndarray, upsample: int = 4) -> np.ndarray:
    """Stand-in for the VAE decoder: first three channels mapped to [0, 1], upsampled."""
    img = np.clip(0.5 + 0.5 * latent[..., :3], 0.0, 1.0)
    return np.repeat(np.repeat(img, upsample, axis=0), upsample, axis=1)


class _Run:
    def __init__(self, out: Path):
        self.out = out
        self.stages: list[dict] = []

    def artifact(self, stage: str, name: str, writer) -> None:
        path = self.out / name
        writer(path)
        entry = next((s for s in self.stages if s["name"] == stage), None)
        if entry is None:
            entry = {"name": stage, "artifacts": {}}
            self.stages.append(entry)
        entry["artifacts"][name] = io.sha256_file(path)


def run_pipeline(config: PipelineConfig | str | Path, out_dir) -> dict:
    """Execute every stage, writing artifacts and ``report.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(out)
    stage = "config"
    try:
        cfg = config if isinstance(config, PipelineConfig) else load_config(config)
        report = {"config_sha256": cfg.sha256, "seeds": cfg.seeds, "config": cfg.raw}

        stage = "landmarks"
        seq = LandmarkSequence.load(cfg.landmarks)

        stage = "crop-region"
        regions = [face_crop_region(f, cfg.frame_size, seq.index_map, cfg.crop_margin).__dict__
                   for f in seq.frames]
        run.artifact(stage, "crop_regions.json", lambda p: io.write_json(p, regions))

        stage = "intensity"
        mi = motion_intensity(seq, *cfg.intensity_range, cfg.levels)
        run.artifact(stage, "intensity.json", lambda p: io.write_json(
            p, {"I_e": mi.expression, "I_h": mi.head, "level_e": mi.expression_level,
                "level_h": mi.head_level}))

        stage = "embedding"
        emb = IntensityEmbedding(cfg.levels, cfg.bank.width // 2, seed=cfg.seeds["embedding"])
        e_s = emb(mi.expression_level, mi.head_level)
        run.artifact(stage, "intensity_embedding.hpt", lambda p: io.write_tensor(p, e_s.data))

        stage = "bank-forward"
        bank = MemoryBank(cfg.bank, seed=cfg.seeds["bank"])
        frames = Tensor(io.read_tensor(cfg.motion_features))
        refined = bank(frames, e_s)
        run.artifact(stage, "refined_motion.hpt", lambda p: io.write_tensor(p, refined.data))

        stage = "adapter-forward"
        adapter = IMAdapter(cfg.adapter, seed=cfg.seeds["adapter"])
        grid = PatchGrid(Tensor(io.read_tensor(cfg.appearance)), *cfg.appearance_grid)
        adapted = adapter(grid, Tensor(io.read_tensor(cfg.id_features)))
        run.artifact(stage, "appearance_adapted.hpt", lambda p: io.write_tensor(p, adapted.tokens.data))

        stage = "condition-pack"
        bundle = condition_pack(adapted.tokens.detach(), refined.detach(), frames, None, cfg.toy)
        run.artifact(stage, "condition.json", lambda p: io.write_json(p, {
            "appearance_tokens": bundle.appearance.shape[0],
            "motion_tokens": bundle.motion.shape[0],
            "motion_frames": frames.shape[0],
            "motion_refined": refined.shape[0],
        }))

        stage = "toy-sampling"
        model = ToyDenoiser(cfg.toy, seed=cfg.seeds["denoiser"])
        target = io.read_tensor(cfg.target_latent) if cfg.target_latent else None
        history = None
        if target is not None and cfg.train_steps > 0:
            history = train_toy(model, [TrainSample(target, bundle)], steps=cfg.train_steps,
                                seed=cfg.seeds["train"], eval_draws=4)
        sched = NoiseSchedule.linear(cfg.toy.timesteps, cfg.toy.beta_start, cfg.toy.beta_end)
        traj = ddim_sample(model, bundle, sched, cfg.sample_steps, cfg.cfg_scale, cfg.seeds["sample"])
        run.artifact(stage, "trajectory.hpt", lambda p: io.write_tensor(p, traj))
        if history is not None:
            run.artifact(stage, "train_history.json", lambda p: io.write_json(p, history))

        stage = "metrics"
        metrics = {}
        if target is not None:
            pair = FramePair(pseudo_decode(traj[-1]), pseudo_decode(target))
            lmd_raw = None
            if cfg.landmarks_generated is not None:
                lmd_raw = lmd(LandmarkSequence.load(cfg.landmarks_generated), seq)
            metrics = frame_report([pair], lmd_raw, workers=worker_count())
        run.artifact(stage, "metrics.json", lambda p: io.write_json(p, metrics))
    except StageError as exc:
        _fail(run, exc.stage, exc.cause)
        raise
    except Exception as exc:
        _fail(run, stage, f"{type(exc).__name__}: {exc}")
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc

    report.update({"status": "ok", "stages": run.stages})
    io.write_json(out / "report.json", report)
    return report


def _fail(run: _Run, stage: str, cause: str) -> None:
    io.write_json(run.out / "report.json", {
        "status": "failed",
        "failed_stage": stage,
        "cause": cause,
        "partial": True,
        "stages": run.stages,
    })
