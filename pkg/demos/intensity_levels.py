"""
Motion intensity from a landmark clip
=====================================

Expression and head intensities of a synthetic clip, their discrete
levels, and the embedding row they select.
"""

import numpy as np

from hpk.fixtures import synthetic_landmarks
from hpk.landmarks import IntensityEmbedding, LandmarkSequence, face_crop_region, motion_intensity

seq = synthetic_landmarks(n=8, seed=0)
mi = motion_intensity(seq)
print(f"I_e = {mi.expression:.4f} -> level {mi.expression_level}")
print(f"I_h = {mi.head:.4f} -> level {mi.head_level}")

# the same clip filmed closer and shifted gives the same intensities
moved = LandmarkSequence(seq.frames * 3.0 + [40.0, -25.0], center_index=seq.center_index)
print("after zoom + shift:", motion_intensity(moved).expression, motion_intensity(moved).head)

# a frozen face has no motion at all
still = LandmarkSequence(np.repeat(seq.frames[:1], 8, axis=0), center_index=seq.center_index)
print("static clip:", motion_intensity(still))

emb = IntensityEmbedding(seed=1)
e_s = emb(mi.expression_level, mi.head_level)
print("E_s shape:", e_s.shape)

box = face_crop_region(seq.frames[0], (256, 256), seq.index_map, margin=0.1)
print("eyebrow-to-mouth crop:", box)
