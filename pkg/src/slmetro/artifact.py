"""Certified dimensions of the benchmark artifacts (all lengths in mm)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np


def _default_ball_positions() -> tuple[tuple[float, float], ...]:
    # 3 x 4 array placed between the marker rows and columns
    return tuple((x, y) for y in (-10.0, 0.0, 10.0) for x in (-15.0, -5.0, 5.0, 15.0))


@dataclass(frozen=True)
class ArtifactSpec:
    # marker flat
    l_c: float = 10.0
    marker_rows: int = 4
    marker_cols: int = 5
    marker_radius: float = 2.0
    marker_ring_width: float | None = 0.5  # None -> solid disks
    flat_size: tuple[float, float] = (90.0, 80.0)
    # gauge block
    h_c: float = 1.0
    block_size: tuple[float, float] = (12.0, 5.0)
    block_center: tuple[float, float] = (0.0, 0.0)
    # ball array
    r_c: float = 2.0
    ball_count: int = 12
    ball_positions: tuple[tuple[float, float], ...] = field(default_factory=_default_ball_positions)
    # TypeC pin array
    pin_rows: int = 2
    pin_cols: int = 12
    pin_pitch: float = 2.0
    pin_row_spacing: float = 4.0
    pin_radius: float = 0.4
    pin_height: float = 1.0
    pin_spread: float = 0.025

    def __post_init__(self):
        for name in ("l_c", "marker_radius", "h_c", "r_c", "pin_pitch", "pin_radius", "pin_height"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.marker_rows < 1 or self.marker_cols < 1:
            raise ValueError("marker layout needs at least one row and column")
        if self.ball_count < 1:
            raise ValueError("ball_count must be >= 1")
        if len(self.ball_positions) < self.ball_count:
            raise ValueError(f"{self.ball_count} balls but only {len(self.ball_positions)} positions")
        if self.marker_ring_width is not None and not 0 < self.marker_ring_width < self.marker_radius:
            raise ValueError("marker_ring_width must lie in (0, marker_radius)")
        if min(self.block_size) <= 0 or min(self.flat_size) <= 0:
            raise ValueError("block and flat sizes must be positive")
        if self.pin_spread < 0:
            raise ValueError("pin_spread must be >= 0")
        object.__setattr__(self, "ball_positions", tuple(tuple(map(float, p)) for p in self.ball_positions))
        object.__setattr__(self, "flat_size", tuple(map(float, self.flat_size)))
        object.__setattr__(self, "block_size", tuple(map(float, self.block_size)))
        object.__setattr__(self, "block_center", tuple(map(float, self.block_center)))

    def marker_positions(self) -> np.ndarray:
        """Marker centres on the flat, ``(rows * cols, 2)``, row-major, centred."""
        xs = (np.arange(self.marker_cols) - (self.marker_cols - 1) / 2) * self.l_c
        ys = (np.arange(self.marker_rows) - (self.marker_rows - 1) / 2) * self.l_c
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def pin_positions(self) -> np.ndarray:
        xs = (np.arange(self.pin_cols) - (self.pin_cols - 1) / 2) * self.pin_pitch
        ys = (np.arange(self.pin_rows) - (self.pin_rows - 1) / 2) * self.pin_row_spacing
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown artifact fields: {sorted(unknown)}")
        return cls(**d)
