"""
Retargeting a driving skeleton
==============================

Align a larger, shifted driving pose to the source portrait, then apply
the training-time augmentations.
"""

import numpy as np

from hpk.pose_retarget import (Skeleton, apply_retarget, color_jitter, compute_retarget,
                               drop_eye_keypoints, edge_dropout)

pts = np.array([[128, 100], [118, 90], [138, 90], [90, 170], [166, 170], [70, 230], [186, 230],
                [60, 290], [196, 290]], float)
edges = [(0, 1), (0, 2), (1, 2), (0, 3), (0, 4), (3, 4), (3, 5), (4, 6), (5, 7), (6, 8)]
sem = {"nose": 0, "eyes": [1, 2], "shoulders": [3, 4]}
source = Skeleton(pts, np.ones(9), np.ones(9, bool), edges, sem)

driving = [Skeleton(1.8 * pts + [60 + 4 * k, 20], np.ones(9), np.ones(9, bool), edges, sem)
           for k in range(3)]
t = compute_retarget(source, driving[0])
print(f"scale {t.scale:.4f}, translation {t.translation}")
aligned = apply_retarget(driving, t)
print("first nose:", aligned[0].points[0], "source nose:", source.points[0])
print("nose drift over the clip:", [s.points[0].round(2).tolist() for s in aligned])

no_eyes = drop_eye_keypoints(aligned[0])
print("edges without eyes:", no_eyes.edges)
print("after dropout:", edge_dropout(no_eyes, p=0.5, seed=3).edges)

img = np.random.default_rng(0).random((4, 4, 3))
print("jittered pixel:", color_jitter(img, seed=1)[0, 0], "from", img[0, 0])
