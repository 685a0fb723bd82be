"""Landmark-sequence geometry: crop region, motion intensities, embeddings."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .nn import Module, param
from .numeric import Tensor

LEVELS = 64
EMBED_DIM = 384


class DegenerateGeometryError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class LandmarkSequence:
    frames: np.ndarray  # n × m × 2
    fps: float = 25.0
    center_index: int = 0
    index_map: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 2:
            raise ValueError(f"frames must be n×m×2, got {self.frames.shape}")
        n, m, _ = self.frames.shape
        if n < 1 or m < 2:
            raise ValueError(f"need n ≥ 1 frames and m ≥ 2 points, got n={n}, m={m}")
        if not 0 <= self.center_index < m:
            raise ValueError(f"center_index {self.center_index} outside [0, {m})")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("landmark coordinates must be finite")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def m(self) -> int:
        return self.frames.shape[1]

    @classmethod
    def from_json(cls, obj: dict) -> "LandmarkSequence":
        return cls(
            frames=np.array(obj["frames"], dtype=np.float64),
            fps=float(obj.get("fps", 25.0)),
            center_index=int(obj.get("center_index", 0)),
            index_map={k: [int(i) for i in v] for k, v in obj.get("index_map", {}).items()},
        )

    @classmethod
    def load(cls, path) -> "LandmarkSequence":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        return {
            "fps": self.fps,
            "center_index": self.center_index,
            "index_map": self.index_map,
            "frames": self.frames.tolist(),
        }


@dataclass(frozen=True)
class MotionIntensity:
    expression: float
    head: float
    expression_level: int
    head_level: int


@dataclass(frozen=True)
class FaceCropRegion:
    left: float
    top: float
    right: float
    bottom: float


def relative_offsets(seq: LandmarkSequence) -> np.ndarray:
    f = seq.frames
    return f - f[:, seq.center_index:seq.center_index + 1, :]


def face_scale(seq: LandmarkSequence) -> float:
    """Diagonal length of the first frame's landmark bounding box."""
    first = seq.frames[0]
    extent = first.max(axis=0) - first.min(axis=0)
    s = float(np.hypot(extent[0], extent[1]))
    if s <= 0.0:
        raise DegenerateGeometryError("first frame landmarks are all identical; face scale is zero")
    return s


def expression_intensity(seq: LandmarkSequence) -> float:
    # deviations are taken about frame 0 first so static clips give exact zeros
    e = relative_offsets(seq)
    e = e - e[:1]
    dev = e - e.mean(axis=0, keepdims=True)
    per_frame = np.sqrt((dev ** 2).sum(axis=2).mean(axis=1))
    return float(per_frame.sum() / (seq.n * face_scale(seq)))


def head_intensity(seq: LandmarkSequence) -> float:
    c = seq.frames[:, seq.center_index, :]
    c = c - c[:1]
    dev = c - c.mean(axis=0, keepdims=True)
    return float(math.sqrt((dev ** 2).sum(axis=1).mean()) / face_scale(seq))


def discretize(value: float, range_min: float = 0.0, range_max: float = 1.0, d: int = LEVELS) -> int:
    """Uniform binning of [range_min, range_max) into d levels, with clamping."""
    if not range_min < range_max:
        raise ValueError(f"invalid range [{range_min}, {range_max})")
    if d < 2:
        raise ValueError(f"need at least 2 levels, got {d}")
    frac = (float(value) - range_min) / (range_max - range_min)
    return int(min(max(math.floor(frac * d), 0), d - 1))


def motion_intensity(seq: LandmarkSequence, range_min: float = 0.0, range_max: float = 1.0,
                     d: int = LEVELS) -> MotionIntensity:
    ie, ih = expression_intensity(seq), head_intensity(seq)
    return MotionIntensity(ie, ih, discretize(ie, range_min, range_max, d),
                           discretize(ih, range_min, range_max, d))


class IntensityEmbedding(Module):
    """Two d×h lookup tables; E_s is the concatenation of the looked-up rows."""

    def __init__(self, levels: int = LEVELS, dim: int = EMBED_DIM, seed: int = 0):
        rng = np.random.default_rng(seed)
        std = dim ** -0.25  # variance 1/sqrt(dim), same rule as the memories
        self.expression_table = param(rng.normal(0.0, std, size=(levels, dim)))
        self.head_table = param(rng.normal(0.0, std, size=(levels, dim)))
        self.levels, self.dim = levels, dim

    def __call__(self, expression_level: int, head_level: int) -> Tensor:
        return intensity_embedding((expression_level, head_level), self)


def intensity_embedding(levels: tuple[int, int], tables: IntensityEmbedding) -> Tensor:
    le, lh = (int(v) for v in levels)
    for lv in (le, lh):
        if not 0 <= lv < tables.levels:
            raise IndexError(f"intensity level {lv} outside [0, {tables.levels})")
    return nm.concat([tables.expression_table[le], tables.head_table[lh]], axis=0)


def face_crop_region(frame_landmarks: np.ndarray, frame_size: tuple[int, int],
                     index_map: dict[str, list[int]], margin: float = 0.0) -> FaceCropRegion:
    """Box from the eyebrow tops to the bottom of the mouth.

    ``frame_size`` is (width, height). Each side grows by ``margin`` times
    the box size on that axis, then the box is clamped to the frame.
    """
    brows = list(index_map.get("eyebrows", []))
    mouth = list(index_map.get("mouth", []))
    if not brows or not mouth:
        raise ConfigError("index_map needs non-empty 'eyebrows' and 'mouth' index lists")
    pts = np.asarray(frame_landmarks, dtype=np.float64)
    union = pts[brows + mouth]
    top = pts[brows, 1].min()
    bottom = pts[mouth, 1].max()
    left, right = union[:, 0].min(), union[:, 0].max()
    dx, dy = (right - left) * margin, (bottom - top) * margin
    width, height = frame_size
    left, right = max(left - dx, 0.0), min(right + dx, float(width))
    top, bottom = max(top - dy, 0.0), min(bottom + dy, float(height))
    if not (left < right and top < bottom):
        raise DegenerateGeometryError(f"empty crop region ({left}, {top}, {right}, {bottom})")
    return FaceCropRegion(float(left), float(top), float(right), float(bottom))
