"""HPT1 tensor files, parameter containers, and JSON validators.

HPT1 layout: b"HPT1", u32 rank, rank × u64 dims, then little-endian float64
values in row-major order. A parameter container is a plain concatenation
of HPT1 records with a ``<file>.json`` manifest naming each record.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import jsonschema
import numpy as np

MAGIC = b"HPT1"
_HEADER = struct.Struct("<4sI")


class FormatError(ValueError):
    pass


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr, dtype="<f8")  # tobytes() is C-ordered; ascontiguousarray would promote 0-d
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return _HEADER.pack(MAGIC, arr.ndim) + dims + arr.tobytes()


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns (array, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise FormatError("file too short for HPT1 header")
    magic, rank = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic bytes {magic!r}")
    pos = offset + _HEADER.size
    if len(buf) - pos < 8 * rank:
        raise FormatError(f"size mismatch: header declares rank {rank} but file ends early")
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + 8 * count
    if end > len(buf):
        raise FormatError(f"size mismatch: shape {tuple(dims)} needs {8 * count} data bytes, "
                          f"{len(buf) - pos} present")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(dims)
    return arr, end


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError(f"size mismatch: {len(buf) - end} trailing bytes after tensor data")
    return arr


def save_params(path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    blob, entries, offset = [], [], 0
    for name, arr in state.items():
        rec = encode_tensor(arr)
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        blob.append(rec)
        offset += len(rec)
    path.write_bytes(b"".join(blob))
    manifest = {"format": "HPT1-container", "tensors": entries, "meta": meta or {}}
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(manifest_path(path).read_text())
    buf = path.read_bytes()
    state = {}
    for entry in manifest["tensors"]:
        arr, _ = decode_tensor(buf, entry["offset"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{entry['name']}: manifest shape {entry['shape']} != stored {list(arr.shape)}")
        state[entry["name"]] = arr
    return state, manifest.get("meta", {})


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


LANDMARK_SCHEMA = {
    "type": "object",
    "required": ["frames"],
    "properties": {
        "fps": {"type": "number", "exclusiveMinimum": 0},
        "center_index": {"type": "integer", "minimum": 0},
        "index_map": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "frames": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "array",
                "minItems": 2,
                "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
            },
        },
    },
}

SKELETON_SCHEMA = {
    "type": "object",
    "required": ["points", "edges"],
    "properties": {
        "points": {
            "type": "array",
            "items": {"type": "array", "minItems": 3, "maxItems": 3, "items": {"type": "number"}},
        },
        "valid": {"type": "array", "items": {"type": "boolean"}},
        "edges": {
            "type": "array",
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "integer", "minimum": 0}},
        },
        "semantics": {"type": "object"},
    },
}


def _schema_errors(obj, schema) -> list[str]:
    v = jsonschema.Draft202012Validator(schema)
    return [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in sorted(v.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))]


def _validate_landmarks(obj) -> list[str]:
    diags = _schema_errors(obj, LANDMARK_SCHEMA)
    frames = obj.get("frames") if isinstance(obj, dict) else None
    if isinstance(frames, list) and frames and isinstance(frames[0], list):
        m = len(frames[0])
        for k, fr in enumerate(frames[1:], start=1):
            if isinstance(fr, list) and len(fr) != m:
                diags.append(f"frames/{k}: has {len(fr)} points, frame 0 has {m}")
        c = obj.get("center_index", 0)
        if isinstance(c, int) and c >= m:
            diags.append(f"center_index: {c} out of range for {m} points")
        for key, idx in (obj.get("index_map") or {}).items():
            bad = [i for i in idx if isinstance(i, int) and i >= m] if isinstance(idx, list) else []
            if bad:
                diags.append(f"index_map/{key}: indices {bad} out of range for {m} points")
        flat = [v for fr in frames if isinstance(fr, list) for pt in fr if isinstance(pt, list)
                for v in pt if isinstance(v, (int, float))]
        if flat and not np.all(np.isfinite(flat)):
            diags.append("frames: non-finite coordinate")
    return diags


def _validate_skeleton(obj) -> list[str]:
    diags = _schema_errors(obj, SKELETON_SCHEMA)
    if not isinstance(obj, dict) or not isinstance(obj.get("points"), list):
        return diags
    p = len(obj["points"])
    valid = obj.get("valid")
    if isinstance(valid, list) and len(valid) != p:
        diags.append(f"valid: has {len(valid)} flags for {p} points")
    for n, e in enumerate(obj.get("edges") or []):
        if isinstance(e, list) and any(isinstance(i, int) and i >= p for i in e):
            diags.append(f"edges/{n}: index out of range for {p} points")
    sem = obj.get("semantics") or {}
    nose = sem.get("nose")
    if nose is not None and (not isinstance(nose, int) or not 0 <= nose < p):
        diags.append(f"semantics/nose: {nose!r} is not a valid point index")
    return diags


def validate(path, kind: str) -> list[str]:
    """Return every problem found in a file; an empty list means valid. Read-only."""
    path = Path(path)
    if not path.is_file():
        return [f"{path}: file not found"]
    if kind == "hpt":
        try:
            arr = read_tensor(path)
        except FormatError as exc:
            return [f"{path}: {exc}"]
        return [] if np.all(np.isfinite(arr)) else [f"{path}: non-finite values"]
    if kind not in ("landmarks", "skeleton"):
        raise ValueError(f"unknown file kind {kind!r}")
    try:
        obj = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return [f"{path}: invalid JSON ({exc})"]
    check = _validate_landmarks if kind == "landmarks" else _validate_skeleton
    return [f"{path}: {d}" for d in check(obj)]
