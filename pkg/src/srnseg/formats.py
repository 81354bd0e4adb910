"""Dependency-free image, depth and point-cloud encodings."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager

import numpy as np


class FormatError(ValueError):
    pass


@contextmanager
def atomic_open(path, mode="wb"):
    """Write to a temp file in the target directory and rename it into place on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 from floats in [0, 1] or uint8."""
    arr = rgb if rgb.dtype == np.uint8 else to_uint8(rgb)
    h, w, _ = arr.shape
    with atomic_open(path) as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """Binary P5 of uint8 values (class ids are stored verbatim)."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise FormatError("PGM values must fit in 0..255")
        arr = arr.astype(np.uint8)
    h, w = arr.shape
    with atomic_open(path) as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr).tobytes())


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != magic:
        raise FormatError(f"{path}: expected {magic.decode()} header, got {tokens[0][:4]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    n = w * h * channels
    body = raw[pos:pos + n]
    if len(body) != n:
        raise FormatError(f"{path}: expected {n} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels > 1 else arr.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    """uint8 ``[H, W, 3]``."""
    return _read_pnm(path, b"P6", 3).copy()


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5", 1).copy()


def write_depth(path, depth: np.ndarray) -> None:
    """ASCII: ``height width`` then one row of floats per line; misses written as ``inf``."""
    h, w = depth.shape
    lines = [f"{h} {w}"]
    for row in depth:
        lines.append(" ".join("inf" if not np.isfinite(x) else repr(float(x)) for x in row))
    with atomic_open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_depth(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = fh.read().split("\n")
        h, w = (int(t) for t in lines[0].split())
        vals = np.array([float(t) for line in lines[1:1 + h] for t in line.split()])
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot parse depth file {path}: {exc}") from exc
    if vals.size != h * w:
        raise FormatError(f"{path}: expected {h * w} depth values, got {vals.size}")
    return vals.reshape(h, w)


def write_ply(path, points: np.ndarray, colors: np.ndarray, labels: np.ndarray) -> None:
    """ASCII PLY with float xyz, uchar rgb and a uchar ``label`` property."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = to_uint8(colors).reshape(-1, 3) if np.asarray(colors).dtype != np.uint8 else colors
    labels = np.asarray(labels).reshape(-1)
    n = points.shape[0]
    if cols.shape[0] != n or labels.shape[0] != n:
        raise FormatError("points, colors and labels must have the same length")
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uchar label",
        "end_header",
    ]
    with atomic_open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for p, c, lab in zip(points, cols, labels):
            fh.write(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]} {int(lab)}\n")


def read_ply(path) -> dict[str, np.ndarray]:
    """Parse the ASCII PLY written by :func:`write_ply`."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError(f"{path}: not a PLY file")
    count = None
    props = []
    i = 1
    while lines[i] != "end_header":
        parts = lines[i].split()
        if parts[0] == "element" and parts[1] == "vertex":
            count = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        i += 1
    body = lines[i + 1:]
    if count is None or len(body) != count:
        raise FormatError(f"{path}: header says {count} vertices, body has {len(body)}")
    table = np.array([[float(t) for t in row.split()] for row in body]).reshape(count, len(props))
    return {
        "points": table[:, :3],
        "colors": table[:, 3:6].astype(np.uint8),
        "labels": table[:, 6].astype(np.uint8),
        "count": count,
    }
