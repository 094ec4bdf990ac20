"""Scene I/O: binary PLY splat files and the versioned scene dump format.

The PLY reader targets the reference splat export layout: a single binary
little-endian `vertex` element with properties x, y, z, scale_0..2 (stored in
log-space), rot_0..3 (scalar-first quaternion), and opacity (stored as a
logit). Extra properties (colors, normals, SH coefficients) are ignored.

The scene dump is an .npz with a format-version tag holding the
post-preprocessing arrays plus the resolved preprocessing options, so a dump
reloads without re-deriving clamp defaults (exact up to unit-quaternion
renormalization rounding):

    version    "splatcone-scene-v1"
    means      (n, 3) float64     quats      (n, 4) float64
    scales     (n, 3) float64     opacities  (n,)   float64
    confidence ()     float64     opacity_min / scale_min / scale_max /
                                  anisotropy_cap  () float64
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from .scene import PreprocessOptions, Scene, SceneError

DUMP_VERSION = "splatcone-scene-v1"

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}

_REQUIRED = ("x", "y", "z", "scale_0", "scale_1", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3", "opacity")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _parse_header(fh) -> tuple[int, list[tuple[str, str]]]:
    """Returns (vertex_count, [(name, dtype_str), ...]) for the vertex element."""
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise SceneError("malformed header: missing 'ply' magic")
    fmt = fh.readline().split()
    if len(fmt) < 2 or fmt[0] != b"format" or fmt[1] != b"binary_little_endian":
        raise SceneError("malformed header: only binary_little_endian PLY is supported")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    while True:
        line = fh.readline()
        if not line:
            raise SceneError("malformed header: truncated before end_header")
        toks = line.decode("ascii", errors="replace").split()
        if not toks or toks[0] == "comment":
            continue
        if toks[0] == "end_header":
            break
        if toks[0] == "element":
            if toks[1] == "vertex":
                in_vertex = True
                count = int(toks[2])
            else:
                if count is None:
                    raise SceneError(f"malformed header: element '{toks[1]}' precedes vertex data")
                in_vertex = False
        elif toks[0] == "property" and in_vertex:
            if toks[1] == "list":
                raise SceneError("malformed header: list property in vertex element")
            if toks[1] not in _PLY_TYPES:
                raise SceneError(f"malformed header: unknown property type '{toks[1]}'")
            props.append((toks[2], _PLY_TYPES[toks[1]]))
    if count is None:
        raise SceneError("malformed header: no vertex element")
    return count, props


def load_ply(path: str | Path, opts: PreprocessOptions | None = None) -> Scene:
    """Load a splat PLY and run the preprocessing pipeline.

    Stored scales are exponentiated and the stored opacity logit is passed
    through a sigmoid before filtering; quaternions are normalized.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        count, props = _parse_header(fh)
        names = [p[0] for p in props]
        for req in _REQUIRED:
            if req not in names:
                raise SceneError(f"missing required property '{req}'")
        dtype = np.dtype(props)
        raw = np.fromfile(fh, dtype=dtype, count=count)
    if raw.shape[0] != count:
        raise SceneError(f"truncated body: expected {count} vertices, got {raw.shape[0]}")

    for name in _REQUIRED:
        col = raw[name]
        bad = ~np.isfinite(col.astype(np.float64))
        if bad.any():
            i = int(np.argmax(bad))
            raise SceneError(f"non-finite value in property '{name}' at splat index {i}")

    means = np.stack([raw["x"], raw["y"], raw["z"]], axis=1).astype(np.float64)
    scales = np.exp(np.stack([raw["scale_0"], raw["scale_1"], raw["scale_2"]], axis=1).astype(np.float64))
    quats = np.stack([raw["rot_0"], raw["rot_1"], raw["rot_2"], raw["rot_3"]], axis=1).astype(np.float64)
    opacities = _sigmoid(raw["opacity"].astype(np.float64))
    return Scene.from_arrays(means, quats, scales, opacities, opts)


def save_ply(path: str | Path, scene: Scene) -> None:
    """Write a scene back out in the reference splat PLY layout (float32).

    Inverse of the load transforms: scales go out as logs, opacity as a logit.
    """
    n = len(scene)
    dtype = np.dtype([(name, "<f4") for name in _REQUIRED])
    rec = np.empty(n, dtype=dtype)
    rec["x"], rec["y"], rec["z"] = scene.means.T.astype(np.float32)
    log_s = np.log(scene.scales)
    rec["scale_0"], rec["scale_1"], rec["scale_2"] = log_s.T.astype(np.float32)
    rec["rot_0"], rec["rot_1"], rec["rot_2"], rec["rot_3"] = scene.quats.T.astype(np.float32)
    op = np.clip(scene.opacities, 1e-12, 1.0 - 1e-9)
    rec["opacity"] = np.log(op / (1.0 - op)).astype(np.float32)

    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {name}\n" for name in _REQUIRED)
        + "end_header\n"
    )
    _atomic_write_bytes(path, header.encode("ascii") + rec.tobytes())


def save_scene_dump(path: str | Path, scene: Scene) -> None:
    """Write the versioned .npz scene dump (atomic)."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".npz.tmp")
    try:
        opts = scene.options
        lo = opts.scale_min if opts.scale_min is not None else float(scene.scales.min())
        hi = opts.scale_max if opts.scale_max is not None else float(scene.scales.max())
        with os.fdopen(fd, "wb") as fh:
            np.savez(
                fh,
                version=DUMP_VERSION,
                means=scene.means,
                quats=scene.quats,
                scales=scene.scales,
                opacities=scene.opacities,
                confidence=scene.confidence,
                opacity_min=opts.opacity_min,
                scale_min=lo,
                scale_max=hi,
                anisotropy_cap=opts.anisotropy_cap,
            )
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_scene_dump(path: str | Path, confidence: float | None = None) -> Scene:
    """Reload a scene dump; preprocessing is idempotent on dumped arrays."""
    with np.load(path, allow_pickle=False) as z:
        if "version" not in z or str(z["version"]) != DUMP_VERSION:
            raise SceneError(f"unrecognized scene dump version in {path}")
        opts = PreprocessOptions(
            opacity_min=float(z["opacity_min"]),
            scale_min=float(z["scale_min"]),
            scale_max=float(z["scale_max"]),
            anisotropy_cap=float(z["anisotropy_cap"]),
            confidence=confidence if confidence is not None else float(z["confidence"]),
        )
        return Scene.from_arrays(z["means"], z["quats"], z["scales"], z["opacities"], opts)


def _atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_write_text(path: str | Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))
