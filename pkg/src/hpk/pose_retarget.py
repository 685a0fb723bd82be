"""Skeleton retargeting, eye-keypoint removal, edge dropout and color jitter."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv


class RetargetError(ValueError):
    pass


@dataclass
class Skeleton:
    points: np.ndarray  # p × 2
    confidence: np.ndarray  # p
    valid: np.ndarray  # p, bool
    edges: list[tuple[int, int]]
    semantics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        p = len(self.points)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(p)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(p)
        self.edges = [(int(i), int(j)) for i, j in self.edges]
        bad = [e for e in self.edges if not (0 <= e[0] < p and 0 <= e[1] < p)]
        if bad:
            raise ValueError(f"edges reference missing points: {bad}")

    @classmethod
    def from_json(cls, obj: dict) -> "Skeleton":
        pts = np.array(obj["points"], dtype=np.float64).reshape(-1, 3)
        valid = obj.get("valid", [True] * len(pts))
        return cls(pts[:, :2], pts[:, 2], valid, [tuple(e) for e in obj.get("edges", [])],
                   dict(obj.get("semantics", {})))

    @classmethod
    def load(cls, path) -> "Skeleton":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        pts = np.column_stack([self.points, self.confidence])
        return {
            "points": pts.tolist(),
            "valid": self.valid.tolist(),
            "edges": [list(e) for e in self.edges],
            "semantics": self.semantics,
        }

    @property
    def nose(self) -> int | None:
        i = self.semantics.get("nose")
        return None if i is None else int(i)

    def valid_edges(self) -> set[tuple[int, int]]:
        return {e for e in self.edges if self.valid[e[0]] and self.valid[e[1]]}

    def edge_length(self, edge: tuple[int, int]) -> float:
        i, j = edge
        return float(np.linalg.norm(self.points[i] - self.points[j]))


@dataclass(frozen=True)
class RetargetTransform:
    translation: np.ndarray
    scale: float
    anchor: np.ndarray  # nose of the first driving frame

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise RetargetError(f"scale must be positive and finite, got {self.scale}")


def _nose_point(skel: Skeleton, role: str) -> np.ndarray:
    i = skel.nose
    if i is None or not skel.valid[i]:
        raise RetargetError(f"{role} skeleton has no valid nose keypoint")
    return skel.points[i]


def compute_retarget(source: Skeleton, driving_first: Skeleton) -> RetargetTransform:
    src_nose = _nose_point(source, "source")
    drv_nose = _nose_point(driving_first, "driving")
    common = sorted(source.valid_edges() & driving_first.valid_edges())
    ratios = [source.edge_length(e) / driving_first.edge_length(e)
              for e in common if driving_first.edge_length(e) > 0]
    if not ratios:
        raise RetargetError("source and driving skeletons share no valid edge")
    return RetargetTransform(src_nose - drv_nose, float(np.median(ratios)), drv_nose.copy())


def apply_retarget(seq: list[Skeleton], t: RetargetTransform) -> list[Skeleton]:
    """Scale about the first driving nose, then move it onto the source nose."""
    out = []
    for skel in seq:
        pts = t.anchor + t.translation + t.scale * (skel.points - t.anchor)
        out.append(replace(skel, points=pts, edges=list(skel.edges)))
    return out


def drop_eye_keypoints(skel: Skeleton) -> Skeleton:
    eyes = {int(i) for i in skel.semantics.get("eyes", [])}
    if not eyes:
        return replace(skel)
    valid = skel.valid.copy()
    valid[list(eyes)] = False
    edges = [e for e in skel.edges if e[0] not in eyes and e[1] not in eyes]
    return replace(skel, valid=valid, edges=edges)


def default_protected_edges(skel: Skeleton) -> set[tuple[int, int]]:
    """Edges touching the nose or the shoulders."""
    anchors = set()
    if skel.nose is not None:
        anchors.add(skel.nose)
    anchors.update(int(i) for i in skel.semantics.get("shoulders", []))
    return {e for e in skel.edges if e[0] in anchors or e[1] in anchors}


def edge_dropout(skel: Skeleton, p: float = 0.05, seed=None,
                 protected: set[tuple[int, int]] | None = None) -> Skeleton:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if protected is None:
        protected = default_protected_edges(skel)
    rng = np.random.default_rng(seed)
    draws = rng.random(len(skel.edges))
    kept = [e for e, u in zip(skel.edges, draws) if e in protected or u >= p]
    return replace(skel, edges=kept)


DEFAULT_JITTER = {
    "brightness": (0.8, 1.2),
    "contrast": (0.8, 1.2),
    "saturation": (0.8, 1.2),
    "hue": (-0.05, 0.05),
}


def _check_ranges(ranges: dict) -> dict:
    out = dict(DEFAULT_JITTER)
    out.update(ranges)
    for name, (lo, hi) in out.items():
        if name not in DEFAULT_JITTER:
            raise ValueError(f"unknown jitter component {name!r}")
        identity = 0.0 if name == "hue" else 1.0
        if not lo <= identity <= hi:
            raise ValueError(f"{name} range ({lo}, {hi}) must contain {identity}")
        if name == "hue" and not -0.5 <= lo <= hi <= 0.5:
            raise ValueError(f"hue range ({lo}, {hi}) must lie in [-0.5, 0.5]")
        if name != "hue" and lo < 0:
            raise ValueError(f"{name} range ({lo}, {hi}) must be non-negative")
    return out


def _gray(img: np.ndarray) -> np.ndarray:
    return img @ np.array([0.299, 0.587, 0.114])


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    m = _gray(img).mean()
    return np.clip((img - m) * factor + m, 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    g = _gray(img)[..., None]
    return np.clip((img - g) * factor + g, 0.0, 1.0)


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0)


def jitter_factors(ranges: dict | None = None, seed=None) -> dict[str, float]:
    ranges = _check_ranges(ranges or {})
    rng = np.random.default_rng(seed)
    return {name: float(rng.uniform(*ranges[name]))
            for name in ("brightness", "contrast", "saturation", "hue")}


def color_jitter(image: np.ndarray, ranges: dict | None = None, seed=None) -> np.ndarray:
    """Brightness, contrast, saturation, then hue, each factor drawn per call.

    Components whose drawn factor is the identity are skipped, so collapsed
    ranges return the input unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be H×W×3, got {img.shape}")
    f = jitter_factors(ranges, seed)
    if f["brightness"] != 1.0:
        img = adjust_brightness(img, f["brightness"])
    if f["contrast"] != 1.0:
        img = adjust_contrast(img, f["contrast"])
    if f["saturation"] != 1.0:
        img = adjust_saturation(img, f["saturation"])
    if f["hue"] != 0.0:
        img = adjust_hue(img, f["hue"])
    return img.copy() if img is image else img
