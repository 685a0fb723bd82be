"""Reference-based reenactment metrics: LMD, PSNR, SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .landmarks import LandmarkSequence

LMD_REPORT_SCALE = 1e3
PSNR_CAP = 100.0


@dataclass
class FramePair:
    generated: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        self.generated = np.asarray(self.generated, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if self.generated.shape != self.reference.shape:
            raise ValueError(f"frame shapes differ: {self.generated.shape} vs {self.reference.shape}")
        if self.generated.ndim == 2:
            self.generated = self.generated[..., None]
            self.reference = self.reference[..., None]
        if self.generated.ndim != 3:
            raise ValueError(f"frames must be H×W or H×W×C, got {self.generated.shape}")
        for name, f in (("generated", self.generated), ("reference", self.reference)):
            if not (np.all(np.isfinite(f)) and f.min() >= 0.0 and f.max() <= 1.0):
                raise ValueError(f"{name} frame values must lie in [0, 1]")


def lmd(gen: LandmarkSequence | np.ndarray, ref: LandmarkSequence | np.ndarray) -> float:
    """Mean Euclidean distance between corresponding landmarks (raw units)."""
    a = gen.frames if isinstance(gen, LandmarkSequence) else np.asarray(gen, dtype=np.float64)
    b = ref.frames if isinstance(ref, LandmarkSequence) else np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"landmark counts differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b, axis=-1).mean())


def psnr(pair: FramePair, cap: float = PSNR_CAP) -> float:
    mse = float(np.mean((pair.generated - pair.reference) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(img, win.shape), win)


def ssim_map(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Local SSIM and its contrast-structure part for one channel (valid region)."""
    win = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return lum * cs, cs


def ssim(pair: FramePair, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         sigma: float = 1.5) -> float:
    h, w, c = pair.generated.shape
    if h < window or w < window:
        raise ValueError(f"frame {h}×{w} smaller than the {window}×{window} SSIM window")
    vals = [ssim_map(pair.generated[..., i], pair.reference[..., i], window, sigma, k1, k2)[0].mean()
            for i in range(c)]
    return float(np.mean(vals))


def frame_report(pairs: list[FramePair], lmd_raw: float | None = None, workers: int = 1) -> dict:
    """Table-style summary; LMD is scaled by 10³ as in the reported tables."""
    if workers > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            p_vals = list(ex.map(psnr, pairs))
            s_vals = list(ex.map(ssim, pairs))
    else:
        p_vals = [psnr(p) for p in pairs]
        s_vals = [ssim(p) for p in pairs]
    report = {"PSNR": float(np.mean(p_vals)), "SSIM": float(np.mean(s_vals)), "frames": len(pairs)}
    if lmd_raw is not None:
        report["LMD"] = lmd_raw * LMD_REPORT_SCALE
        report["LMD_raw"] = lmd_raw
    return report
