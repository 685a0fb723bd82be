"""Acceptance gate: one test per criterion, each at its stated tolerance."""
import json
import time

import numpy as np
import pytest

from hpk.cli import main
from hpk.diffusion_toy import (NoiseSchedule, ToyConfig, ToyDenoiser, condition_pack, ddim_sample,
                               ddim_step, train_toy)
from hpk.fixtures import training_pair
from hpk.gradcheck import check_gradients
from hpk.imadapter import AdapterConfig, IMAdapter, PatchGrid
from hpk.landmarks import (IntensityEmbedding, LandmarkSequence, expression_intensity,
                           head_intensity)
from hpk.metrics import PSNR_CAP, FramePair, lmd, psnr, ssim
from hpk.motion_bank import BankConfig, MemoryBank
from hpk.numeric import Tensor
from hpk.pose_retarget import Skeleton, apply_retarget, compute_retarget

from chain import Chain
from oracles import loop_intensities, randomize
from test_cli import FIXTURE

pytestmark = pytest.mark.acceptance


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def test_intensity_invariance(criterion):
    criterion["name"] = "intensity invariance (100 seqs, <1e-10 rel, zero motion exact, <5 s)"
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n, m = int(rng.integers(2, 9)), int(rng.integers(3, 20))
        seq = LandmarkSequence(rng.normal(100, 25, size=(n, m, 2)), center_index=int(rng.integers(m)))
        ie, ih = expression_intensity(seq), head_intensity(seq)
        shift = rng.normal(0, 300, size=2)
        for alpha in (0.5, 2.0, 10.0):
            for frames in (seq.frames * alpha, seq.frames + shift, seq.frames * alpha + shift):
                moved = LandmarkSequence(frames, center_index=seq.center_index)
                worst = max(worst, rel(expression_intensity(moved), ie), rel(head_intensity(moved), ih))
        still = LandmarkSequence(np.repeat(seq.frames[:1], n, axis=0), center_index=seq.center_index)
        assert expression_intensity(still) == 0.0 and head_intensity(still) == 0.0
    elapsed = time.perf_counter() - t0
    criterion["detail"] = f"worst rel {worst:.2e}, {elapsed:.2f} s"
    assert worst < 1e-10
    assert elapsed < 5.0


def test_intensity_oracle_equivalence(criterion):
    criterion["name"] = "intensity oracle equivalence (50 seqs, n<=5, m<=10, 1e-12 rel)"
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        n, m = int(rng.integers(1, 6)), int(rng.integers(2, 11))
        seq = LandmarkSequence(rng.normal(0, 40, size=(n, m, 2)), center_index=int(rng.integers(m)))
        ie, ih = loop_intensities(seq.frames.tolist(), seq.center_index)
        for got, want in ((expression_intensity(seq), ie), (head_intensity(seq), ih)):
            worst = max(worst, 0.0 if got == want else rel(got, want))
    criterion["detail"] = f"worst rel {worst:.2e}"
    assert worst < 1e-12


def _bank_case(seed):
    rng = np.random.default_rng(seed)
    bank = MemoryBank(BankConfig(count=4, width=8, heads=2, blocks=2, cond_dim=8), seed=seed)
    randomize(bank, rng, scale=0.4)
    f = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    c = Tensor(rng.normal(size=8), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 8)) / 32)
    params = dict(bank.named_parameters(), features=f, cond=c)
    return check_gradients(lambda: (bank(f, c) * w).sum(), params, rng, entries=3)


def _adapter_case(seed):
    rng = np.random.default_rng(seed)
    ad = IMAdapter(AdapterConfig(appearance_dim=6, id_dim=5, rank=4, kernels=(1, 3, 5), heads=2), seed=seed)
    randomize(ad, rng, scale=0.4)
    fa, fid = Tensor(rng.normal(size=(6, 6))), Tensor(rng.normal(size=(2, 5)))
    w = Tensor(rng.normal(size=(6, 6)) / 36)
    return check_gradients(lambda: (ad(PatchGrid(fa, 2, 3), fid).tokens * w).sum(),
                           dict(ad.named_parameters()), rng, entries=3)


def _embedding_case(seed):
    rng = np.random.default_rng(seed)
    emb = IntensityEmbedding(levels=8, dim=4, seed=seed)
    le, lh = int(rng.integers(8)), int(rng.integers(8))
    w = Tensor(rng.normal(size=8))
    loss = lambda: (emb(le, lh) * emb(le, lh) * w).sum()
    # sample every entry so the selected rows are always covered
    return check_gradients(loss, dict(emb.named_parameters()), rng, entries=32)


def _chain_case(seed):
    chain = Chain(seed)
    return check_gradients(chain.loss, chain.params(), np.random.default_rng(seed), entries=2)


def test_gradient_integrity(criterion):
    criterion["name"] = "gradient integrity (bank, adapter, embedding, end-to-end loss; 20 seeds; <1e-4; <60 s)"
    t0 = time.perf_counter()
    worst = {}
    for label, case in (("bank", _bank_case), ("adapter", _adapter_case),
                        ("embedding", _embedding_case), ("end-to-end", _chain_case)):
        errs = [r.rel_error for seed in range(20) for r in case(seed)]
        worst[label] = max(errs)
    elapsed = time.perf_counter() - t0
    criterion["detail"] = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s"
    assert max(worst.values()) < 1e-4
    assert elapsed < 60.0


def test_architectural_constants(criterion):
    criterion["name"] = "architectural constants from default config"
    bank_cfg, ad_cfg, toy = BankConfig(), AdapterConfig(), ToyConfig()
    emb = IntensityEmbedding()
    bank = MemoryBank(seed=0)
    silu_in = np.array([-1.0, 0.5, 2.0])
    h = bank.blocks[0].mlp.fc1(Tensor(np.zeros((1, 768))))
    assert emb.levels == 64
    assert (bank_cfg.count, bank_cfg.width, bank_cfg.heads, bank_cfg.blocks) == (64, 768, 8, 6)
    assert bank.memories.shape == (64, 768) and len(bank.blocks) == 6
    assert bank.blocks[0].mlp.activation(Tensor(silu_in)).data.tolist() == \
        pytest.approx((silu_in / (1 + np.exp(-silu_in))).tolist(), rel=1e-15)
    assert h.shape == (1, 3072)
    assert ad_cfg.rank == 384 and tuple(ad_cfg.kernels) == (1, 3, 5)
    assert toy.cfg_scale == 2.0 and toy.grad_clip == 0.99
    criterion["detail"] = "d=64, 64x768, 8 heads, 6 blocks, SiLU, rank 384, kernels {1,3,5}, CFG 2.0, clip 0.99"


def test_adapter_identity_at_init(criterion):
    criterion["name"] = "adapter identity at init (100 inputs, bit-exact)"
    ad = IMAdapter(seed=0)
    rng = np.random.default_rng(11)
    for k in range(100):
        h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        fa = rng.normal(size=(h * w, 1024))
        out = ad(PatchGrid(Tensor(fa), h, w), Tensor(rng.normal(size=(int(rng.integers(1, 3)), 512))))
        assert out.tokens.data.tobytes() == fa.tobytes(), f"input {k}"
    criterion["detail"] = "100/100 bit-identical"


def test_memory_bank_shape_law(criterion):
    criterion["name"] = "memory-bank shape law (n in {1,2,16,100} -> 64 tokens, deterministic)"
    bank = MemoryBank(seed=3)
    rng = np.random.default_rng(5)
    c = Tensor(rng.normal(size=768))
    for n in (1, 2, 16, 100):
        f = Tensor(rng.normal(size=(n, 768)))
        a, b = bank(f, c).data, bank(f, c).data
        assert a.shape == (64, 768)
        assert a.tobytes() == b.tobytes()
    criterion["detail"] = "shape (64, 768) for all n; repeat runs bit-identical"


def _skeleton(points):
    edges = [(0, 1), (0, 2), (1, 2), (0, 3), (3, 4), (3, 5), (4, 6), (5, 7)]
    p = len(points)
    return Skeleton(points, np.ones(p), np.ones(p, bool), edges, {"nose": 0, "eyes": [1, 2]})


def test_retargeting_exactness(criterion):
    criterion["name"] = "retargeting exactness (nose 1e-12, edge lengths 1e-10 rel)"
    rng = np.random.default_rng(13)
    nose_err, len_err = 0.0, 0.0
    for _ in range(100):
        src = _skeleton(rng.uniform(0, 512, size=(8, 2)))
        seq = []
        s, tr = rng.uniform(0.2, 5), rng.uniform(-300, 300, size=2)
        for k in range(4):
            th = rng.uniform(-np.pi, np.pi) if k else rng.uniform(-0.3, 0.3)
            rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            seq.append(_skeleton(s * src.points @ rot.T + tr + k))
        out = apply_retarget(seq, compute_retarget(src, seq[0]))
        nose_err = max(nose_err, np.abs(out[0].points[0] - src.points[0]).max())
        for skel in out:
            for e in src.edges:
                len_err = max(len_err, rel(skel.edge_length(e), src.edge_length(e)))
    criterion["detail"] = f"nose {nose_err:.1e}, edge {len_err:.1e}"
    assert nose_err <= 1e-12
    assert len_err < 1e-10


def test_ddim_determinism_and_collapse(criterion):
    criterion["name"] = "DDIM determinism and eps=0 collapse (1e-12)"
    cfg = ToyConfig()
    model = ToyDenoiser(cfg, seed=1)
    rng = np.random.default_rng(17)
    cond = condition_pack(Tensor(rng.normal(size=(4, 1024))), Tensor(rng.normal(size=(64, 768))),
                          Tensor(rng.normal(size=(3, 768))), None, cfg)
    sched = NoiseSchedule.linear()
    a = ddim_sample(model, cond, sched, steps=10, w=2.0, seed=9)
    b = ddim_sample(model, cond, sched, steps=10, w=2.0, seed=9)
    assert a.tobytes() == b.tobytes()
    worst = 0.0
    x = rng.normal(size=cfg.latent_shape)
    for t in range(1, 50):
        for tp in (-1, 0, t // 2, t - 1):
            got = ddim_step(x, np.zeros_like(x), t, tp, sched)
            want = np.sqrt(sched.ab(tp) / sched.ab(t)) * x
            worst = max(worst, float(np.max(np.abs(got - want) / np.abs(want))))
    criterion["detail"] = f"bit-identical runs, collapse rel {worst:.1e}"
    assert worst < 1e-12


def test_toy_training_progress(criterion):
    criterion["name"] = "toy training progress (200 steps, >=50% loss drop, <120 s)"
    t0 = time.perf_counter()
    model = ToyDenoiser(seed=0)
    hist = train_toy(model, training_pair(model.cfg, seed=7), steps=200, seed=7)
    elapsed = time.perf_counter() - t0
    drop = 1.0 - hist["eval_final"] / hist["eval_initial"]
    criterion["detail"] = (f"loss {hist['eval_initial']:.3f} -> {hist['eval_final']:.3f} "
                           f"({100 * drop:.0f}% drop), {elapsed:.1f} s")
    assert drop >= 0.5
    assert elapsed < 120.0


def test_metric_sanity(criterion):
    criterion["name"] = "metric sanity (identities, strict degradation over 5 noise levels)"
    rng = np.random.default_rng(19)
    x = 0.2 + 0.6 * rng.random((48, 48, 3))
    seq = LandmarkSequence(rng.normal(size=(3, 6, 2)))
    assert lmd(seq, seq) == 0.0
    assert ssim(FramePair(x, x)) == pytest.approx(1.0, abs=1e-12)
    assert psnr(FramePair(x, x)) == PSNR_CAP
    amps = [0.01, 0.03, 0.1, 0.3, 0.6]
    noisy = [np.clip(x + a * np.random.default_rng(1).standard_normal(x.shape), 0, 1) for a in amps]
    p = [psnr(FramePair(n, x)) for n in noisy]
    s = [ssim(FramePair(n, x)) for n in noisy]
    criterion["detail"] = "PSNR " + " > ".join(f"{v:.1f}" for v in p) + "; SSIM " + \
        " > ".join(f"{v:.3f}" for v in s)
    assert all(u > v for u, v in zip(p, p[1:]))
    assert all(u > v for u, v in zip(s, s[1:]))


def test_end_to_end_fixture(criterion, tmp_path):
    criterion["name"] = "end-to-end fixture run (exit 0, byte-reproducible, <60 s)"
    t0 = time.perf_counter()
    code_a = main(["run", "--config", str(FIXTURE / "pipeline.json"), "--out", str(tmp_path / "a")])
    elapsed = time.perf_counter() - t0
    code_b = main(["run", "--config", str(FIXTURE / "pipeline.json"), "--out", str(tmp_path / "b")])
    assert code_a == 0 and code_b == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    criterion["detail"] = f"{len(files)} files identical={same}, {elapsed:.1f} s"
    assert same and report["status"] == "ok"
    assert elapsed < 60.0
