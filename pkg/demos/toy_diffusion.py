"""
Training and sampling the toy denoiser
======================================

A short training run on two latents, then guided DDIM sampling.
"""

import numpy as np

from hpk.diffusion_toy import NoiseSchedule, ToyDenoiser, ddim_sample, train_toy
from hpk.fixtures import training_pair

model = ToyDenoiser(seed=0)
data = training_pair(model.cfg, seed=7)
hist = train_toy(model, data, steps=60, seed=7)
print(f"eval loss {hist['eval_initial']:.3f} -> {hist['eval_final']:.3f}")
print("train loss every 10 steps:", np.round(hist["train"][::10], 3))

sched = NoiseSchedule.linear()
traj = ddim_sample(model, data[0].cond, sched, steps=10, w=2.0, seed=0)
print("trajectory:", traj.shape)
for w in (1.0, 2.0, 4.0):
    x0 = ddim_sample(model, data[0].cond, sched, steps=10, w=w, seed=0)[-1]
    print(f"w={w}: distance to training latent {np.linalg.norm(x0 - data[0].latent):.3f}")
