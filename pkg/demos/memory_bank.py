"""
Refining motion tokens with a memory bank
=========================================

Any number of per-frame motion features goes in; a fixed set of 64
refined tokens comes out.
"""

import numpy as np

from hpk.landmarks import IntensityEmbedding
from hpk.motion_bank import MemoryBank
from hpk.numeric import Tensor

rng = np.random.default_rng(0)
bank = MemoryBank(seed=0)
e_s = IntensityEmbedding(seed=1)(20, 7)

for n in (1, 8, 100):
    frames = Tensor(rng.normal(size=(n, 768)))
    out = bank(frames, e_s)
    print(f"{n:4d} frames -> {out.shape}")

# memories are drawn with variance 1/sqrt(768)
print("memory std:", bank.memories.data.std(), "expected", 768 ** -0.25)

# the adaptive norms start at zero, so they reduce to a plain layer norm
print("AdaLN shift at init:", np.abs(bank.blocks[0].norm_in.to_shift.weight.data).max())
