"""Grid-window geometry shared by the simulator, feature layers, and planner.

A window is an oriented square lattice of cells laid out in the world frame.
Local coordinates put the window corner at (0, 0) with +x along the window
orientation; a point is inside the footprint iff 0 <= x < side and
0 <= y < side (closed lower/left edges, open upper/right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]; in-range values pass through unchanged."""
    if -math.pi < angle <= math.pi:
        return float(angle)
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GridWindow:
    """Oriented m_side x m_side cell lattice anchored at ``origin`` (world frame).

    Cell (ix, iy) spans [ix*res, (ix+1)*res) x [iy*res, (iy+1)*res) in local
    coordinates; its flat state index is ``iy * m_side + ix``.
    """

    origin: tuple[float, float]
    orientation: float
    m_side: int = 3
    resolution: float = 1.0

    def __post_init__(self) -> None:
        if self.m_side < 2:
            raise ValueError(f"m_side must be >= 2, got {self.m_side}")
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def side(self) -> float:
        return self.m_side * self.resolution

    @property
    def state_count(self) -> int:
        return self.m_side * self.m_side

    def to_local(self, point: np.ndarray) -> np.ndarray:
        """World point(s) -> window-local coordinates. Accepts (2,) or (N, 2)."""
        p = np.asarray(point, dtype=float)
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        shifted = p - np.asarray(self.origin)
        x = shifted[..., 0] * c + shifted[..., 1] * s
        y = -shifted[..., 0] * s + shifted[..., 1] * c
        return np.stack([x, y], axis=-1)

    def to_world(self, point_local: np.ndarray) -> np.ndarray:
        p = np.asarray(point_local, dtype=float)
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        x = p[..., 0] * c - p[..., 1] * s + self.origin[0]
        y = p[..., 0] * s + p[..., 1] * c + self.origin[1]
        return np.stack([x, y], axis=-1)

    def contains(self, point: np.ndarray) -> bool:
        local = self.to_local(point)
        return bool(
            local[0] >= 0.0 and local[0] < self.side and local[1] >= 0.0 and local[1] < self.side
        )

    def cell_of(self, point: np.ndarray) -> tuple[int, int] | None:
        """Cell (ix, iy) containing a world point, or None when outside."""
        local = self.to_local(point)
        if not (0.0 <= local[0] < self.side and 0.0 <= local[1] < self.side):
            return None
        ix = min(int(local[0] / self.resolution), self.m_side - 1)
        iy = min(int(local[1] / self.resolution), self.m_side - 1)
        return ix, iy

    def state_index(self, ix: int, iy: int) -> int:
        return iy * self.m_side + ix

    def state_of(self, point: np.ndarray) -> int | None:
        cell = self.cell_of(point)
        if cell is None:
            return None
        return self.state_index(*cell)

    def cell_center_local(self, ix: int, iy: int) -> np.ndarray:
        return np.array([(ix + 0.5) * self.resolution, (iy + 0.5) * self.resolution])

    def cell_center_world(self, ix: int, iy: int) -> np.ndarray:
        return self.to_world(self.cell_center_local(ix, iy))

    def cell_centers_world(self) -> np.ndarray:
        """All cell centers in state-index order, shape (m_side**2, 2)."""
        idx = np.arange(self.m_side)
        xs, ys = np.meshgrid(idx, idx, indexing="xy")  # rows = iy
        local = np.stack(
            [(xs + 0.5) * self.resolution, (ys + 0.5) * self.resolution], axis=-1
        ).reshape(-1, 2)
        return self.to_world(local)

    def corners_world(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise from the origin corner."""
        side = self.side
        local = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
        return self.to_world(local)

    def to_dict(self) -> dict:
        return {
            "origin": [self.origin[0], self.origin[1]],
            "orientation": self.orientation,
            "m_side": self.m_side,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridWindow":
        return cls(
            origin=(data["origin"][0], data["origin"][1]),
            orientation=data["orientation"],
            m_side=data["m_side"],
            resolution=data["resolution"],
        )


def bresenham_line(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer cells on the line from (x0, y0) to (x1, y1), both inclusive."""
    cells = []
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return cells


def ray_rect_distance(
    origin: np.ndarray, direction: np.ndarray, rect: tuple[float, float, float, float]
) -> float | None:
    """Distance along a unit ray to an axis-aligned rect (xmin, ymin, xmax, ymax).

    Returns None when the ray misses. Slab method; an origin inside the rect
    hits at distance 0.
    """
    xmin, ymin, xmax, ymax = rect
    tmin, tmax = 0.0, math.inf
    for axis, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
        o, d = float(origin[axis]), float(direction[axis])
        if abs(d) < 1e-12:
            if o < lo or o > hi:
                return None
            continue
        t1 = (lo - o) / d
        t2 = (hi - o) / d
        if t1 > t2:
            t1, t2 = t2, t1
        tmin = max(tmin, t1)
        tmax = min(tmax, t2)
        if tmin > tmax:
            return None
    return tmin


def cast_rays(
    origin: np.ndarray,
    obstacles: list[tuple[float, float, float, float]],
    increment_deg: float = 1.0,
    max_range: float = 12.0,
) -> list[np.ndarray]:
    """Synthesize range returns: hit points of rays swept a full turn.

    Rays leave ``origin`` every ``increment_deg`` degrees; each keeps the
    nearest obstacle intersection within ``max_range``. Misses produce no
    return.
    """
    hits = []
    if not obstacles:
        return hits
    origin = np.asarray(origin, dtype=float)
    n_rays = int(round(360.0 / increment_deg))
    for k in range(n_rays):
        angle = math.radians(k * increment_deg)
        direction = np.array([math.cos(angle), math.sin(angle)])
        best = None
        for rect in obstacles:
            t = ray_rect_distance(origin, direction, rect)
            if t is not None and t <= max_range and (best is None or t < best):
                best = t
        if best is not None:
            hits.append(origin + best * direction)
    return hits


def point_segment_distance(point: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """Distance from a point to the segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return float(np.linalg.norm(point - a))
    t = float(np.clip((point - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (a + t * ab)))
