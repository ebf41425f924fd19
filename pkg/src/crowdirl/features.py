"""Per-cell feature layers over the robot-local grid window.

Four layers: distance to the active waypoint, rasterized obstacle returns,
discounted predicted pedestrian trajectories, and social-distance comfort
penalties. ``build_feature_map`` stacks them and min-max normalizes each
layer independently to [-1, 1].

Layer arrays are (m_side, m_side) indexed [iy, ix], so a C-order flatten
yields values in flat state order (state = iy * m_side + ix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import GridWindow, bresenham_line, cast_rays
from .sim import PedestrianState, WorldState

LAYER_NAMES = ("goal_distance", "obstacle", "prediction", "social")

# fitted curve d = 1.577 / (rho - 0.8824)^0.215 - 0.967 diverges at this pole
DENSITY_POLE = 0.8824
DENSITY_EPS = 1e-3


@dataclass
class SocialDistanceParams:
    alpha: float = 1.0
    beta: float = 2.0
    density_radius: float = 2.0
    d_social_min: float = 0.45
    d_social_max: float = 2.0

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.d_social_min < self.d_social_max:
            raise ValueError("require 0 < d_social_min < d_social_max")
        if self.density_radius <= 0:
            raise ValueError("density_radius must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "SocialDistanceParams":
        return cls(**data)


@dataclass(frozen=True)
class TrajectoryPrediction:
    pedestrian_id: int
    horizon_steps: int
    predicted_positions: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        positions = tuple((float(p[0]), float(p[1])) for p in self.predicted_positions)
        object.__setattr__(self, "predicted_positions", positions)
        if len(positions) != self.horizon_steps:
            raise ValueError(
                f"expected {self.horizon_steps} predicted positions, got {len(positions)}"
            )


Predictor = Callable[[PedestrianState, Sequence[np.ndarray], int, float], list[np.ndarray]]


@dataclass
class FeatureConfig:
    gamma_pred: float = 0.9
    prediction_horizon: int = 6
    social: SocialDistanceParams = field(default_factory=SocialDistanceParams)
    ray_increment_deg: float = 1.0
    ray_max_range: float = 12.0

    def __post_init__(self) -> None:
        if not 0 < self.gamma_pred < 1:
            raise ValueError(f"gamma_pred must lie in (0, 1), got {self.gamma_pred}")
        if self.prediction_horizon < 1:
            raise ValueError("prediction_horizon must be >= 1")

    def to_dict(self) -> dict:
        return {
            "gamma_pred": self.gamma_pred,
            "prediction_horizon": self.prediction_horizon,
            "social": self.social.to_dict(),
            "ray_increment_deg": self.ray_increment_deg,
            "ray_max_range": self.ray_max_range,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureConfig":
        kwargs = dict(data)
        if "social" in kwargs:
            kwargs["social"] = SocialDistanceParams.from_dict(kwargs["social"])
        return cls(**kwargs)


@dataclass(frozen=True)
class FeatureMap:
    """Named scalar layers over one grid window, normalized to [-1, 1]."""

    window: GridWindow
    layers: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        m = self.window.m_side
        for name, layer in self.layers.items():
            if layer.shape != (m, m):
                raise ValueError(f"layer {name!r} has shape {layer.shape}, expected {(m, m)}")
            layer.flags.writeable = False

    @property
    def feature_count(self) -> int:
        return len(self.layers)

    def as_matrix(self) -> np.ndarray:
        """Feature matrix (state_count, n_layers); row s is cell s's vector."""
        return np.stack([self.layers[name].reshape(-1) for name in self.layers], axis=1)

    def to_dict(self) -> dict:
        return {
            "window": self.window.to_dict(),
            "layers": {name: layer.reshape(-1).tolist() for name, layer in self.layers.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureMap":
        window = GridWindow.from_dict(data["window"])
        m = window.m_side
        layers = {
            name: np.array(values, dtype=float).reshape(m, m)
            for name, values in data["layers"].items()
        }
        return cls(window=window, layers=layers)


def minmax_unit(layer: np.ndarray) -> np.ndarray:
    """Min-max stretch to [-1, 1]; a constant layer maps to all zeros."""
    lo = float(layer.min())
    hi = float(layer.max())
    if hi - lo < 1e-9:
        return np.zeros_like(layer)
    return 2.0 * (layer - lo) / (hi - lo) - 1.0


def _cell_centers_grid(window: GridWindow) -> np.ndarray:
    """Cell centers as (m_side, m_side, 2) world coordinates, [iy, ix] indexed."""
    return window.cell_centers_world().reshape(window.m_side, window.m_side, 2)


def goal_distance_layer(
    window: GridWindow, waypoint: np.ndarray, normalized: bool = True
) -> np.ndarray:
    """Distance from each cell center to the waypoint, min-max scaled to [0, 1].

    ``normalized=False`` returns the raw distances (useful for inspection).
    """
    waypoint = np.asarray(waypoint, dtype=float)
    if not np.all(np.isfinite(waypoint)):
        raise ValueError("waypoint must be finite")
    centers = _cell_centers_grid(window)
    dist = np.linalg.norm(centers - waypoint, axis=-1)
    if not normalized:
        return dist
    lo, hi = float(dist.min()), float(dist.max())
    if hi - lo < 1e-9:
        return np.zeros_like(dist)
    return (dist - lo) / (hi - lo)


def _cell_coords_unclipped(window: GridWindow, point: np.ndarray) -> tuple[int, int]:
    local = window.to_local(point)
    return int(math.floor(local[0] / window.resolution)), int(
        math.floor(local[1] / window.resolution)
    )


def obstacle_layer(
    window: GridWindow,
    obstacles: Sequence[tuple[float, float, float, float]],
    robot_position: np.ndarray,
    increment_deg: float = 1.0,
    max_range: float = 12.0,
) -> np.ndarray:
    """Binary occupancy from synthesized range returns.

    Rays sweep a full turn from the robot; each return is traced into the
    window cell-by-cell (Bresenham), intervening cells stay free (0) and the
    terminal cell is marked occupied (1).
    """
    m = window.m_side
    layer = np.zeros((m, m))
    hits = cast_rays(np.asarray(robot_position, dtype=float), list(obstacles), increment_deg, max_range)
    if not hits:
        return layer
    rx, ry = _cell_coords_unclipped(window, np.asarray(robot_position, dtype=float))
    for hit in hits:
        hx, hy = _cell_coords_unclipped(window, hit)
        trace = bresenham_line(rx, ry, hx, hy)
        ix, iy = trace[-1]
        if 0 <= ix < m and 0 <= iy < m:
            layer[iy, ix] = 1.0
    return layer


def constant_velocity_predictor(
    pedestrian: PedestrianState,
    history: Sequence[np.ndarray],
    horizon: int,
    dt: float,
) -> list[np.ndarray]:
    """Extrapolate position + k*dt*velocity for k = 1..horizon."""
    return [pedestrian.position + k * dt * pedestrian.linear_velocity for k in range(1, horizon + 1)]


def predict_trajectories(
    pedestrians: Sequence[PedestrianState],
    history: dict[int, list[np.ndarray]] | None,
    horizon: int,
    dt: float = 0.1,
    predictor: Predictor = constant_velocity_predictor,
) -> list[TrajectoryPrediction]:
    """Run the predictor for every pedestrian; empty history is fine."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    history = history or {}
    out = []
    for ped in pedestrians:
        positions = predictor(ped, history.get(ped.id, []), horizon, dt)
        out.append(
            TrajectoryPrediction(
                pedestrian_id=ped.id,
                horizon_steps=horizon,
                predicted_positions=tuple((p[0], p[1]) for p in positions),
            )
        )
    return out


def prediction_layer(
    window: GridWindow, predictions: Sequence[TrajectoryPrediction], gamma_pred: float = 0.9
) -> np.ndarray:
    """Discounted trajectory occupancy: cell gets -gamma^t at entry time t.

    t indexes the sequence of distinct window cells each predicted trajectory
    enters, starting at 0; a cell keeps its first entry (re-entries ignored).
    """
    if not 0 < gamma_pred < 1:
        raise ValueError(f"gamma_pred must lie in (0, 1), got {gamma_pred}")
    m = window.m_side
    layer = np.zeros((m, m))
    for pred in predictions:
        entered: list[tuple[int, int]] = []
        for pos in pred.predicted_positions:
            cell = window.cell_of(np.asarray(pos, dtype=float))
            if cell is None or cell in entered:
                continue
            entered.append(cell)
            ix, iy = cell
            layer[iy, ix] -= gamma_pred ** (len(entered) - 1)
    return layer


def social_distance(rho_den: float, params: SocialDistanceParams | None = None) -> float:
    """Crowd-density-dependent comfort radius, clamped to a sane range.

    The fitted curve has a pole at rho = 0.8824 persons/m^2 and is only
    meaningful above it; densities at or below the pole are clamped just
    past it (which then hits the ceiling clamp).
    """
    params = params or SocialDistanceParams()
    if rho_den < 0:
        raise ValueError(f"rho_den must be >= 0, got {rho_den}")
    rho = max(rho_den, DENSITY_POLE + DENSITY_EPS)
    d = 1.577 / (rho - DENSITY_POLE) ** 0.215 - 0.967
    return float(min(max(d, params.d_social_min), params.d_social_max))


def local_density(
    pedestrian: PedestrianState,
    pedestrians: Sequence[PedestrianState],
    density_radius: float,
) -> float:
    """Neighbors (excluding self) within density_radius, per unit disc area."""
    count = sum(
        1
        for other in pedestrians
        if other.id != pedestrian.id
        and float(np.linalg.norm(other.position - pedestrian.position)) <= density_radius
    )
    return count / (math.pi * density_radius**2)


def social_layer(
    window: GridWindow,
    pedestrians: Sequence[PedestrianState],
    params: SocialDistanceParams | None = None,
) -> np.ndarray:
    """Comfort penalty inside the nearest pedestrian's social disc, 0 outside."""
    params = params or SocialDistanceParams()
    m = window.m_side
    layer = np.zeros((m, m))
    if not pedestrians:
        return layer
    positions = np.stack([p.position for p in pedestrians])
    d_socials = [
        social_distance(local_density(p, pedestrians, params.density_radius), params)
        for p in pedestrians
    ]
    centers = _cell_centers_grid(window)
    for iy in range(m):
        for ix in range(m):
            dists = np.linalg.norm(positions - centers[iy, ix], axis=1)
            nearest = int(np.argmin(dists))
            d_ij = float(dists[nearest])
            d_soc = d_socials[nearest]
            if d_ij <= d_soc:
                layer[iy, ix] = (
                    params.alpha * (d_ij**params.beta - d_soc**params.beta) / d_soc**params.beta
                )
    return layer


def build_feature_map(
    world: WorldState,
    window: GridWindow,
    waypoint: np.ndarray,
    config: FeatureConfig | None = None,
    history: dict[int, list[np.ndarray]] | None = None,
    predictor: Predictor = constant_velocity_predictor,
) -> FeatureMap:
    """Stack all four layers and normalize each independently to [-1, 1]."""
    config = config or FeatureConfig()
    predictions = predict_trajectories(
        world.pedestrians, history, config.prediction_horizon, world.clock.dt, predictor
    )
    raw = {
        "goal_distance": goal_distance_layer(window, waypoint),
        "obstacle": obstacle_layer(
            window,
            world.obstacles,
            world.robot.position,
            config.ray_increment_deg,
            config.ray_max_range,
        ),
        "prediction": prediction_layer(window, predictions, config.gamma_pred),
        "social": social_layer(window, world.pedestrians, config.social),
    }
    return FeatureMap(window=window, layers={name: minmax_unit(raw[name]) for name in LAYER_NAMES})
