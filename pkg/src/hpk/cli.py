"""Command-line entry point.

Exit codes: 0 success, 2 validation failure, 3 runtime stage failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .diffusion_toy import (ConditionBundle, NoiseSchedule, ToyConfig, ToyDenoiser, ddim_sample,
                            train_toy)
from .fixtures import training_pair
from .imadapter import AdapterConfig, IMAdapter, PatchGrid
from .landmarks import IntensityEmbedding, LandmarkSequence, face_crop_region, motion_intensity
from .metrics import FramePair, frame_report, lmd
from .motion_bank import BankConfig, MemoryBank
from .numeric import Tensor
from .pipeline import StageError, run_pipeline, worker_count
from .pose_retarget import (Skeleton, apply_retarget, color_jitter, compute_retarget,
                            drop_eye_keypoints, edge_dropout)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class InputError(ValueError):
    """Bad or missing input; maps to exit code 2."""


def _pair(text: str, sep: str, cast=float) -> tuple:
    try:
        a, b = text.split(sep)
        return cast(a), cast(b)
    except ValueError as exc:
        raise InputError(f"expected two values separated by {sep!r}, got {text!r}") from exc


def _read_json(path) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing file {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc})") from exc


def _tensor(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"missing file {p}")
    try:
        return io.read_tensor(p)
    except io.FormatError as exc:
        raise InputError(f"{p}: {exc}") from exc


def _landmarks(path) -> LandmarkSequence:
    diags = io.validate(path, "landmarks")
    if diags:
        raise InputError("; ".join(diags))
    return LandmarkSequence.load(path)


def _skeleton(path) -> Skeleton:
    diags = io.validate(path, "skeleton")
    if diags:
        raise InputError("; ".join(diags))
    return Skeleton.load(path)


def _emit(obj, out) -> None:
    if out:
        io.write_json(out, obj)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def _load_module(path, kind: str):
    try:
        state, meta = io.load_params(path)
    except FileNotFoundError as exc:
        raise InputError(f"missing parameter file or manifest: {exc.filename}") from exc
    except (io.FormatError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    if meta.get("kind") != kind:
        raise InputError(f"{path}: expected {kind} parameters, manifest says {meta.get('kind')!r}")
    module = _build(kind, meta.get("config", {}), 0)
    try:
        module.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    return module


def _build(kind: str, conf: dict, seed: int):
    try:
        if kind == "bank":
            return MemoryBank(BankConfig(**conf), seed=seed)
        if kind == "adapter":
            return IMAdapter(AdapterConfig(**conf), seed=seed)
        if kind == "embedding":
            return IntensityEmbedding(seed=seed, **conf)
        if kind == "denoiser":
            return ToyDenoiser(ToyConfig(**conf), seed=seed)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid {kind} config: {exc}") from exc
    raise InputError(f"unknown parameter kind {kind!r}")


def _module_config(module) -> dict:
    if isinstance(module, IntensityEmbedding):
        return {"levels": module.levels, "dim": module.dim}
    return module.cfg.to_json()


def save_module(path, module, kind: str) -> None:
    io.save_params(path, module.state_dict(), {"kind": kind, "config": _module_config(module)})


# commands

def cmd_intensity(args) -> int:
    seq = _landmarks(args.landmarks)
    lo, hi = _pair(args.range, ",")
    mi = motion_intensity(seq, lo, hi, args.levels)
    _emit({"I_e": mi.expression, "I_h": mi.head, "level_e": mi.expression_level,
           "level_h": mi.head_level}, args.out)
    return EXIT_OK


def cmd_crop_region(args) -> int:
    seq = _landmarks(args.landmarks)
    size = _pair(args.frame_size, "x", int)
    frames = range(seq.n) if args.frame is None else [args.frame]
    regions = [face_crop_region(seq.frames[k], size, seq.index_map, args.margin).__dict__ for k in frames]
    _emit(regions, args.out)
    return EXIT_OK


def cmd_init_params(args) -> int:
    if not args.out:
        raise InputError("--out is required")
    conf = _read_json(args.config)
    save_module(args.out, _build(args.kind, conf, args.seed), args.kind)
    return EXIT_OK


def cmd_embed(args) -> int:
    emb = _load_module(args.params, "embedding")
    e_s = emb(args.level_e, args.level_h)
    io.write_tensor(args.out, e_s.data)
    return EXIT_OK


def cmd_bank_forward(args) -> int:
    features, e_s = _tensor(args.features), _tensor(args.intensity)
    bank = _load_module(args.params, "bank")
    out = bank(Tensor(features), Tensor(e_s))
    io.write_tensor(args.out, out.data)
    return EXIT_OK


def cmd_adapter_forward(args) -> int:
    fa, fid = _tensor(args.appearance), _tensor(args.id)
    h, w = _pair(args.grid, "x", int)
    adapter = _load_module(args.params, "adapter")
    try:
        grid = PatchGrid(Tensor(fa), h, w)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    io.write_tensor(args.out, adapter(grid, Tensor(fid)).tokens.data)
    return EXIT_OK


def _json_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        return sorted(p.glob("*.json"))
    if p.is_file():
        return [p]
    raise InputError(f"missing path {p}")


def cmd_retarget(args) -> int:
    source = _skeleton(args.source)
    files = _json_files(args.driving)
    if not files:
        raise InputError(f"no skeleton JSON files in {args.driving}")
    driving = [_skeleton(f) for f in files]
    if args.drop_eyes:
        source = drop_eye_keypoints(source)
        driving = [drop_eye_keypoints(s) for s in driving]
    transform = compute_retarget(source, driving[0])
    out = Path(args.out or "retargeted")
    out.mkdir(parents=True, exist_ok=True)
    for f, skel in zip(files, apply_retarget(driving, transform)):
        io.write_json(out / f.name, skel.to_json())
    io.write_json(out / "transform.json", {"translation": transform.translation.tolist(),
                                           "scale": transform.scale,
                                           "anchor": transform.anchor.tolist()})
    return EXIT_OK


def _read_image(path: Path) -> np.ndarray:
    if path.suffix.lower() in (".ppm", ".pnm"):
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return _tensor(path)


def cmd_augment(args) -> int:
    if not args.skeletons and not args.image:
        raise InputError("give --skeletons and/or --image")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    if args.skeletons:
        for i, f in enumerate(_json_files(args.skeletons)):
            skel = edge_dropout(_skeleton(f), args.dropout, seed=[seed, i])
            io.write_json(out / f.name, skel.to_json())
    if args.image:
        img_path = Path(args.image)
        if not img_path.is_file():
            raise InputError(f"missing file {img_path}")
        img = _read_image(img_path)
        ranges = {}
        for name in ("brightness", "contrast", "saturation", "hue"):
            val = getattr(args, name)
            if val is not None:
                ranges[name] = _pair(val, ",")
        try:
            jittered = color_jitter(img, ranges, seed=seed)
        except ValueError as exc:
            raise InputError(str(exc)) from exc
        io.write_tensor(out / (img_path.stem + "_jitter.hpt"), jittered)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    conf = _read_json(args.config)
    conf.pop("steps", None)
    seed = 7 if args.seed is None else args.seed
    try:
        cfg = ToyConfig(**{k: v for k, v in conf.items() if k != "data_seed"})
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid toy config: {exc}") from exc
    data = training_pair(cfg, seed=conf.get("data_seed", 7))
    model = ToyDenoiser(cfg, seed=seed)
    history = train_toy(model, data, steps=args.steps, seed=seed)
    out = Path(args.out or "ckpt")
    out.mkdir(parents=True, exist_ok=True)
    save_module(out / "model.hpt", model, "denoiser")
    for i, s in enumerate(data):
        io.write_tensor(out / f"cond{i}_appearance.hpt", s.cond.appearance.data)
        io.write_tensor(out / f"cond{i}_motion.hpt", s.cond.motion.data)
        io.write_tensor(out / f"latent{i}.hpt", s.latent)
    io.write_json(out / "history.json", history)
    print(json.dumps({"eval_initial": history["eval_initial"], "eval_final": history["eval_final"]}))
    return EXIT_OK


def cmd_sample_toy(args) -> int:
    ckpt = Path(args.ckpt)
    model = _load_module(ckpt / "model.hpt", "denoiser")
    i = args.sample_index
    cond = ConditionBundle(Tensor(_tensor(ckpt / f"cond{i}_appearance.hpt")),
                           Tensor(_tensor(ckpt / f"cond{i}_motion.hpt")))
    cfg = model.cfg
    sched = NoiseSchedule.linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    w = cfg.cfg_scale if args.cfg is None else args.cfg
    traj = ddim_sample(model, cond, sched, args.steps, w, seed=args.seed or 0)
    io.write_tensor(args.out or "trajectory.hpt", traj)
    return EXIT_OK


def _frames(path) -> list[Path]:
    p = Path(path)
    if not p.is_dir():
        raise InputError(f"missing frame directory {p}")
    return sorted(f for f in p.iterdir() if f.suffix.lower() in (".hpt", ".ppm", ".pnm"))


def cmd_metrics(args) -> int:
    gen, ref = _frames(args.gen), _frames(args.ref)
    if len(gen) != len(ref):
        raise InputError(f"{len(gen)} generated frames vs {len(ref)} reference frames")
    try:
        pairs = [FramePair(_read_image(a), _read_image(b)) for a, b in zip(gen, ref)]
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    lmd_raw = None
    if args.landmarks_gen and args.landmarks_ref:
        lmd_raw = lmd(_landmarks(args.landmarks_gen), _landmarks(args.landmarks_ref))
    _emit(frame_report(pairs, lmd_raw, workers=worker_count()), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise InputError("--config is required")
    run_pipeline(args.config, args.out or "run")
    return EXIT_OK


def cmd_validate(args) -> int:
    kind = args.kind
    if kind is None:
        kind = "hpt" if Path(args.path).suffix == ".hpt" else "landmarks"
    diags = io.validate(args.path, kind)
    for d in diags:
        print(d)
    if not diags:
        print(f"{args.path}: ok")
    return EXIT_INVALID if diags else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def globals_(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", default=default, help="JSON configuration file")
        g.add_argument("--seed", type=int, default=default)
        g.add_argument("--out", default=default, help="output file or directory")
        return g

    # SUPPRESS on the subcommand copy keeps flags given before the subcommand
    common = globals_(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="hpk", parents=[globals_(None)], description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("intensity", cmd_intensity, "expression/head intensity and levels")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--range", default="0,1")
    p.add_argument("--levels", type=int, default=64)

    p = add("crop-region", cmd_crop_region, "eyebrow-to-mouth crop boxes")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--frame-size", default="256x256", help="WIDTHxHEIGHT")
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--frame", type=int, default=None)

    p = add("init-params", cmd_init_params, "write freshly initialized parameters")
    p.add_argument("--kind", required=True, choices=["bank", "adapter", "embedding", "denoiser"])

    p = add("embed", cmd_embed, "look up an intensity embedding E_s")
    p.add_argument("--params", required=True)
    p.add_argument("--level-e", type=int, required=True)
    p.add_argument("--level-h", type=int, required=True)

    p = add("bank-forward", cmd_bank_forward, "refine motion features with the memory bank")
    p.add_argument("--features", required=True)
    p.add_argument("--intensity", required=True)
    p.add_argument("--params", required=True)

    p = add("adapter-forward", cmd_adapter_forward, "apply the ID-aware multi-scale adapter")
    p.add_argument("--appearance", required=True)
    p.add_argument("--grid", required=True, help="HxW patch grid")
    p.add_argument("--id", required=True)
    p.add_argument("--params", required=True)

    p = add("retarget", cmd_retarget, "align driving skeletons to a source skeleton")
    p.add_argument("--source", required=True)
    p.add_argument("--driving", required=True, help="directory of per-frame skeleton JSON")
    p.add_argument("--drop-eyes", action="store_true")

    p = add("augment", cmd_augment, "edge dropout on skeletons, color jitter on an image")
    p.add_argument("--skeletons")
    p.add_argument("--dropout", type=float, default=0.05)
    p.add_argument("--image")
    for name in ("brightness", "contrast", "saturation", "hue"):
        p.add_argument(f"--{name}", help="LO,HI")

    p = add("train-toy", cmd_train_toy, "train the toy denoiser on the bundled 2-sample set")
    p.add_argument("--steps", type=int, default=200)

    p = add("sample-toy", cmd_sample_toy, "DDIM sampling from a toy checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--cfg", type=float, default=None)
    p.add_argument("--sample-index", type=int, default=0)

    p = add("metrics", cmd_metrics, "LMD / PSNR / SSIM report")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--landmarks-gen")
    p.add_argument("--landmarks-ref")

    add("run", cmd_run, "run the end-to-end pipeline")

    p = add("validate", cmd_validate, "check a tensor, landmark or skeleton file")
    p.add_argument("path")
    p.add_argument("--kind", choices=["hpt", "landmarks", "skeleton"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_INVALID if exc.validation else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime stage failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
