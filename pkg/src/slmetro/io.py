"""Binary PGM (P5) images and organized binary PLY point grids."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------- PGM


def write_pgm(path, image: np.ndarray, maxval: int | None = None) -> None:
    """Write a 2D array as binary PGM.

    ``uint8`` arrays are written with maxval 255; ``uint16`` arrays (or any
    array with ``maxval > 255``) use big-endian 16-bit samples.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"PGM needs a 2D array, got shape {img.shape}")
    if maxval is None:
        maxval = 65535 if img.dtype == np.uint16 else 255
    if not 0 < maxval < 65536:
        raise FormatError(f"bad PGM maxval {maxval}")
    if np.any(img < 0) or np.any(img > maxval):
        raise FormatError("pixel values outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(img.astype(dtype).tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s+(?:#.*\s+)*(\d+)\s")


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(image, maxval)``; the image dtype is uint8 or uint16."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if not m:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    n = w * h * np.dtype(dtype).itemsize
    body = data[m.end() : m.end() + n]
    if len(body) != n:
        raise FormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return img.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def save_intensity(path, image: np.ndarray, bits: int = 16) -> None:
    """Store a float image in 8-bit count units (0..255) at ``bits`` depth."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 255.0)
    if bits == 8:
        write_pgm(path, np.rint(img).astype(np.uint8))
    elif bits == 16:
        write_pgm(path, np.rint(img * 257.0).astype(np.uint16))
    else:
        raise FormatError(f"unsupported bit depth {bits}")


def load_intensity(path) -> np.ndarray:
    """Read a PGM back into float 8-bit count units regardless of depth."""
    img, maxval = read_pgm(path)
    return img.astype(float) * (255.0 / maxval)


# ---------------------------------------------------------------- PLY grid


def write_grid_ply(path, points: np.ndarray, valid: np.ndarray) -> None:
    """Organized grid as little-endian binary PLY.

    One vertex per camera pixel in row-major order, with float64 x, y, z and
    a uchar ``valid`` flag.  Invalid vertices carry zeros.  The grid shape is
    recorded in an ``obj_info`` header line.
    """
    pts = np.asarray(points, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    if pts.shape != (h, w, 3):
        raise FormatError("points must have shape (height, width, 3)")
    rec = np.zeros(h * w, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("valid", "u1")])
    flat = np.where(valid[..., None], pts, 0.0).reshape(-1, 3)
    rec["x"], rec["y"], rec["z"] = flat[:, 0], flat[:, 1], flat[:, 2]
    rec["valid"] = valid.reshape(-1)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"obj_info width {w} height {h}\n"
        f"element vertex {h * w}\n"
        "property double x\nproperty double y\nproperty double z\nproperty uchar valid\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def read_grid_ply(path) -> tuple[np.ndarray, np.ndarray]:
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii")
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    m = re.search(r"obj_info width (\d+) height (\d+)", header)
    if not m:
        raise FormatError(f"{path}: missing organized-grid obj_info")
    w, h = int(m.group(1)), int(m.group(2))
    props = re.findall(r"property (\w+) (\w+)", header)
    if [p[1] for p in props] != ["x", "y", "z", "valid"]:
        raise FormatError(f"{path}: unexpected vertex properties {props}")
    dt = np.dtype([("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("valid", "u1")])
    body = data[end + len(b"end_header\n") :]
    if len(body) < dt.itemsize * w * h:
        raise FormatError(f"{path}: truncated vertex data")
    rec = np.frombuffer(body[: dt.itemsize * w * h], dtype=dt)
    pts = np.stack([rec["x"], rec["y"], rec["z"]], axis=-1).reshape(h, w, 3).copy()
    valid = rec["valid"].reshape(h, w).astype(bool)
    pts[~valid] = np.nan
    return pts, valid


def read_points_text(path) -> np.ndarray:
    """Whitespace/comma separated ``x y z`` rows (mm); ``#`` comments allowed."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if line:
            rows.append([float(t) for t in line.split()[:3]])
    return np.asarray(rows, dtype=float).reshape(-1, 3)
