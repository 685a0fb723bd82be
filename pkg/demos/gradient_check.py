"""
Checking tape gradients against finite differences
==================================================
"""

import numpy as np

from hpk.gradcheck import check_gradients
from hpk.motion_bank import BankConfig, MemoryBank
from hpk.numeric import Tensor

rng = np.random.default_rng(0)
bank = MemoryBank(BankConfig(count=4, width=8, heads=2, blocks=2, cond_dim=8), seed=0)
for _, p in bank.named_parameters():
    p.assign(rng.normal(0, 0.4, size=p.shape))  # wake up the zero-initialized maps

f, c = Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=8))
w = Tensor(rng.normal(size=(4, 8)) / 32)
for r in check_gradients(lambda: (bank(f, c) * w).sum(), dict(bank.named_parameters()), rng):
    print(f"{r.name:32s} {r.rel_error:.1e}")
