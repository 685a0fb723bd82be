"""
Fusing identity into appearance patches
=======================================

The adapter starts as an exact identity; once its up-projection is
non-zero, identity tokens reshape the patch features.
"""

import numpy as np

from hpk.imadapter import IMAdapter, PatchGrid, sample_id_source
from hpk.numeric import Tensor

rng = np.random.default_rng(0)
adapter = IMAdapter(seed=0)
grid = PatchGrid(Tensor(rng.normal(size=(16, 1024))), 4, 4)
ids = Tensor(rng.normal(size=(1, 512)))

out = adapter(grid, ids)
print("unchanged at init:", out.tokens.data.tobytes() == grid.tokens.data.tobytes())

adapter.up.weight.assign(rng.normal(0, 0.01, size=adapter.up.weight.shape))
out = adapter(grid, ids)
print("mean |change| after perturbing W_up:", np.abs(out.tokens.data - grid.tokens.data).mean())

# during training the ID image comes from a random frame, at inference from the reference
print([sample_id_source("train", 8, seed=s) for s in range(6)], sample_id_source("infer", 8))
