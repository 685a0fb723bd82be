"""
PSNR and SSIM under noise
=========================

Both metrics fall as Gaussian noise grows; the plot is written next to
this script.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hpk.metrics import FramePair, psnr, ssim

rng = np.random.default_rng(0)
ref = 0.2 + 0.6 * rng.random((64, 64, 3))
amps = np.linspace(0.01, 0.5, 12)
p, s = [], []
for a in amps:
    gen = np.clip(ref + a * rng.standard_normal(ref.shape), 0, 1)
    pair = FramePair(gen, ref)
    p.append(psnr(pair))
    s.append(ssim(pair))

fig, ax = plt.subplots(1, 2, figsize=(8, 3))
ax[0].plot(amps, p, "o-")
ax[0].set(xlabel="noise std", ylabel="PSNR (dB)")
ax[1].plot(amps, s, "o-")
ax[1].set(xlabel="noise std", ylabel="SSIM")
fig.tight_layout()
out = Path(__file__).with_suffix(".png")
fig.savefig(out)
print("saved", out)
