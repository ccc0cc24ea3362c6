"""Gray-code + shifted-stripe pattern generation and decoding.

Frame order is fixed: ``n_bits`` Gray bit frames (most significant first),
then their ``n_bits`` complements, then ``n_shifts`` stripe frames.  Gray
frames index the stripe period containing a projector column; the stripe
frames localize the column inside that period.

Columns only: stripes are vertical, so a frame's value depends on the
projector column alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .io import load_intensity, read_pgm, save_intensity, write_pgm

GRAY_BIT = "gray-bit"
GRAY_COMPLEMENT = "gray-complement"
STRIPE_SHIFT = "stripe-shift"

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "slmetro-stack/1"


class CodecError(ValueError):
    pass


class InvalidConfig(CodecError):
    pass


class StackMismatch(CodecError):
    pass


def int_to_gray(n):
    """Reflected binary Gray code; works on ints and integer arrays."""
    return n ^ (n >> 1)


def gray_to_int(g):
    """Inverse of :func:`int_to_gray`."""
    if isinstance(g, np.ndarray):
        n = g.astype(np.int64, copy=True)
        shift = 1
        while shift < 64:
            n ^= n >> shift
            shift <<= 1
        return n
    n = int(g)
    mask = n >> 1
    while mask:
        n ^= mask
        mask >>= 1
    return n


@dataclass(frozen=True)
class CodecConfig:
    proj_width: int = 1280
    proj_height: int = 720
    stripe_period: int = 16
    n_shifts: int = 4
    contrast_threshold: float = 5.0  # 8-bit counts

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.proj_width) != self.proj_width or self.proj_width < 1:
            raise InvalidConfig(f"proj_width must be a positive integer, got {self.proj_width}")
        if int(self.proj_height) != self.proj_height or self.proj_height < 1:
            raise InvalidConfig(f"proj_height must be a positive integer, got {self.proj_height}")
        if int(self.stripe_period) != self.stripe_period or self.stripe_period < 4:
            raise InvalidConfig(f"stripe_period must be an integer >= 4, got {self.stripe_period}")
        if int(self.n_shifts) != self.n_shifts or self.n_shifts < 3:
            raise InvalidConfig(f"n_shifts must be an integer >= 3, got {self.n_shifts}")
        if self.stripe_period > self.proj_width:
            raise InvalidConfig("stripe_period exceeds proj_width")
        if not self.contrast_threshold >= 0:
            raise InvalidConfig(f"contrast_threshold must be >= 0, got {self.contrast_threshold}")

    @property
    def n_stripes(self) -> int:
        return math.ceil(self.proj_width / self.stripe_period)

    @property
    def n_bits(self) -> int:
        # ceil(log2(width / period)); a single stripe still gets one bit
        return max(1, math.ceil(math.log2(self.proj_width / self.stripe_period) - 1e-12))

    @property
    def meta(self) -> tuple[tuple[str, int], ...]:
        tags = [(GRAY_BIT, k) for k in range(self.n_bits)]
        tags += [(GRAY_COMPLEMENT, k) for k in range(self.n_bits)]
        tags += [(STRIPE_SHIFT, s) for s in range(self.n_shifts)]
        return tuple(tags)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown codec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PatternStack:
    """Ordered frames with role tags; used for projected and captured stacks."""

    width: int
    height: int
    frames: tuple[np.ndarray, ...]
    meta: tuple[tuple[str, int], ...]

    def __post_init__(self):
        frames = tuple(np.asarray(f) for f in self.frames)
        if len(frames) != len(self.meta):
            raise StackMismatch(f"{len(frames)} frames but {len(self.meta)} role tags")
        for f in frames:
            if f.shape != (self.height, self.width):
                raise StackMismatch(f"frame shape {f.shape} != ({self.height}, {self.width})")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "meta", tuple((str(r), int(i)) for r, i in self.meta))

    def __len__(self) -> int:
        return len(self.frames)

    def frames_with_role(self, role: str) -> list[np.ndarray]:
        return [f for f, (r, _) in zip(self.frames, self.meta) if r == role]

    def without(self, index: int) -> "PatternStack":
        keep = [i for i in range(len(self)) if i != index]
        return PatternStack(self.width, self.height, [self.frames[i] for i in keep], [self.meta[i] for i in keep])


@dataclass(frozen=True)
class CorrespondenceMap:
    width: int
    height: int
    proj_col: np.ndarray  # NaN where invalid
    valid: np.ndarray
    stripe_index: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------- patterns


def stripe_profile(cfg: CodecConfig, shift: int, columns=None) -> np.ndarray:
    """8-bit stripe intensities at integer projector ``columns``."""
    P, N = cfg.stripe_period, cfg.n_shifts
    c = np.arange(cfg.proj_width) if columns is None else np.asarray(columns)
    # wrap first so every period rounds identically (127.5 ties)
    phase = 2 * np.pi * np.mod(c - shift * P / N, P) / P
    return np.rint(127.5 * (1.0 + np.cos(phase))).astype(np.uint8)


def gray_bit_profile(cfg: CodecConfig, bit: int) -> np.ndarray:
    """Binary (0/255) column profile of Gray frame ``bit`` (0 = MSB)."""
    k = np.arange(cfg.proj_width) // cfg.stripe_period
    g = int_to_gray(k)
    return (((g >> (cfg.n_bits - 1 - bit)) & 1) * 255).astype(np.uint8)


def generate_patterns(
    proj_width: int = 1280, proj_height: int = 720, stripe_period: int = 16, n_shifts: int = 4
) -> PatternStack:
    cfg = CodecConfig(proj_width, proj_height, stripe_period, n_shifts)
    return generate_from_config(cfg)


def generate_from_config(cfg: CodecConfig) -> PatternStack:
    rows = []
    for role, idx in cfg.meta:
        if role == GRAY_BIT:
            rows.append(gray_bit_profile(cfg, idx))
        elif role == GRAY_COMPLEMENT:
            rows.append(255 - gray_bit_profile(cfg, idx))
        else:
            rows.append(stripe_profile(cfg, idx))
    frames = [np.broadcast_to(r, (cfg.proj_height, cfg.proj_width)).copy() for r in rows]
    return PatternStack(cfg.proj_width, cfg.proj_height, frames, cfg.meta)


# ---------------------------------------------------------------- decoding


def binarize(frame, complement, threshold: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bit, confident)`` from a Gray frame and its complement."""
    f = np.asarray(frame, dtype=float)
    c = np.asarray(complement, dtype=float)
    if f.shape != c.shape:
        raise StackMismatch(f"frame shapes differ: {f.shape} vs {c.shape}")
    diff = f - c
    return diff > 0, np.abs(diff) >= threshold


def _phase_sums(stripes, n_shifts: int):
    ang = 2 * np.pi * np.arange(n_shifts) / n_shifts
    S = sum(np.sin(a) * I for a, I in zip(ang, stripes))
    C = sum(np.cos(a) * I for a, I in zip(ang, stripes))
    return S, C


class PhaseTable:
    """Maps the arctangent phase estimate back to an in-period column.

    The camera samples the projected frames between projector pixels
    (linear interpolation of 8-bit stripe values), so the raw fundamental
    phase carries a small periodic bias.  The table is built from the frames
    themselves, evaluated densely over one period, and inverted.
    """

    def __init__(self, cfg: CodecConfig, samples_per_px: int = 512):
        P, N = cfg.stripe_period, cfg.n_shifts
        t = np.arange(P * samples_per_px) / samples_per_px
        i0 = np.floor(t).astype(int)
        frac = t - i0
        stripes = []
        for s in range(N):
            prof = stripe_profile(cfg, s, np.arange(P + 1)).astype(float)
            stripes.append(prof[i0] + frac * (prof[i0 + 1] - prof[i0]))
        S, C = _phase_sums(stripes, N)
        est = np.unwrap(np.arctan2(S, C)) * P / (2 * np.pi)
        est += P * np.round((t[0] - est[0]) / P)
        if np.any(np.diff(est) <= 0):
            raise InvalidConfig("stripe profile gives a non-monotonic phase; increase stripe_period")
        self.period = P
        self._est = np.concatenate([est - P, est, est + P])
        self._true = np.concatenate([t - P, t, t + P])

    def __call__(self, raw_fine: np.ndarray) -> np.ndarray:
        return np.mod(np.interp(raw_fine, self._est, self._true), self.period)


_TABLE_CACHE: dict[CodecConfig, PhaseTable] = {}


def phase_table(cfg: CodecConfig) -> PhaseTable:
    key = CodecConfig(cfg.proj_width, 1, cfg.stripe_period, cfg.n_shifts, 0.0)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = PhaseTable(cfg)
    return _TABLE_CACHE[key]


def check_layout(stack: PatternStack, cfg: CodecConfig) -> None:
    if len(stack) != len(cfg.meta):
        raise StackMismatch(f"stack has {len(stack)} frames, codec expects {len(cfg.meta)}")
    for i, (got, want) in enumerate(zip(stack.meta, cfg.meta)):
        if tuple(got) != want:
            raise StackMismatch(f"frame {i} has role {got[0]}:{got[1]}, expected {want[0]}:{want[1]}")


def decode(stack: PatternStack, cfg: CodecConfig) -> CorrespondenceMap:
    """Per-pixel fractional projector column from a captured stack.

    ``column = stripe_index * period + fine`` where the stripe index comes
    from the Gray bits and ``fine`` from the stripe phase, unwrapped to lie
    within half a period of the Gray stripe's centre.  A pixel is valid when
    every Gray bit has contrast above the threshold, the stripe modulation
    does too, and the column lands inside the projector.
    """
    check_layout(stack, cfg)
    nb = cfg.n_bits
    frames = [np.asarray(f, dtype=float) for f in stack.frames]
    gray = np.zeros(frames[0].shape, dtype=np.int64)
    valid = np.ones(frames[0].shape, dtype=bool)
    for k in range(nb):
        bit, conf = binarize(frames[k], frames[nb + k], cfg.contrast_threshold)
        gray = (gray << 1) | bit.astype(np.int64)
        valid &= conf
    index = gray_to_int(gray)

    P, N = cfg.stripe_period, cfg.n_shifts
    S, C = _phase_sums(frames[2 * nb :], N)
    modulation = (2.0 / N) * np.hypot(S, C)
    valid &= modulation >= max(cfg.contrast_threshold, 1e-9)
    raw = np.mod(np.arctan2(S, C), 2 * np.pi) * P / (2 * np.pi)
    fine = phase_table(cfg)(raw)

    centre = index * P + (P - 1) / 2.0
    col = fine + P * np.round((centre - fine) / P)
    valid &= (index < cfg.n_stripes) & (col >= 0) & (col < cfg.proj_width)
    col = np.where(valid, col, np.nan)
    h, w = valid.shape
    return CorrespondenceMap(w, h, col, valid, np.where(valid, index, -1))


# ---------------------------------------------------------------- stack files


def write_stack(directory, stack: PatternStack, cfg: CodecConfig, bits: int = 8, extra: dict | None = None) -> Path:
    """Write frames as PGM plus a JSON manifest; returns the manifest path.

    Integer 8-bit frames (projected patterns) are written verbatim;
    float captures are quantized at ``bits`` depth.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (frame, (role, idx)) in enumerate(zip(stack.frames, stack.meta)):
        name = f"frame_{i:03d}_{role}_{idx}.pgm"
        if frame.dtype == np.uint8:
            write_pgm(d / name, frame)
        else:
            save_intensity(d / name, frame, bits)
        entries.append({"file": name, "role": role, "index": idx})
    doc = {
        "format": MANIFEST_FORMAT,
        "width": stack.width,
        "height": stack.height,
        "codec": asdict(cfg),
        "frames": entries,
    }
    if extra:
        doc.update(extra)
    path = d / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2))
    return path


def read_stack(directory, as_float: bool = True) -> tuple[PatternStack, CodecConfig, dict]:
    d = Path(directory)
    path = d / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"stack manifest not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise StackMismatch(f"{path}: unknown manifest format {doc.get('format')!r}")
    cfg = CodecConfig.from_dict(doc["codec"])
    frames, meta = [], []
    for e in doc["frames"]:
        f = d / e["file"]
        frames.append(load_intensity(f) if as_float else read_pgm(f)[0])
        meta.append((e["role"], e["index"]))
    return PatternStack(doc["width"], doc["height"], frames, meta), cfg, doc
