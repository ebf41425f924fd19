"""Deterministic 2-D crowd simulation: social-force pedestrians plus a kinematic robot.

World snapshots are immutable values; ``step_world`` returns a new snapshot.
All randomness is confined to scenario generation, which is a pure function
of the scenario seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridWindow, wrap_angle

SCENARIO_KINDS = ("circle_crossing", "corridor", "random_goals")
MIN_SPACING = 0.5  # minimum inter-person spacing at placement, meters


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PedestrianState:
    """One simulated person: planar pose plus the velocity pair (v, omega).

    preferred_speed 0 means "use the shared params.desired_speed"; scenario
    generators assign individual speeds so crossings do not all peak at the
    same instant."""

    id: int
    position: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: float
    goal: np.ndarray
    preferred_speed: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _readonly(self.position))
        object.__setattr__(self, "linear_velocity", _readonly(self.linear_velocity))
        object.__setattr__(self, "goal", _readonly(self.goal))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.linear_velocity))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "position": self.position.tolist(),
            "linear_velocity": self.linear_velocity.tolist(),
            "angular_velocity": self.angular_velocity,
            "goal": self.goal.tolist(),
            "preferred_speed": self.preferred_speed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PedestrianState":
        return cls(
            id=data["id"],
            position=np.array(data["position"], dtype=float),
            linear_velocity=np.array(data["linear_velocity"], dtype=float),
            angular_velocity=float(data["angular_velocity"]),
            goal=np.array(data["goal"], dtype=float),
            preferred_speed=float(data.get("preferred_speed", 0.0)),
        )


@dataclass(frozen=True)
class RobotState:
    position: np.ndarray
    heading: float
    speed: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", _readonly(self.position))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "heading": self.heading, "speed": self.speed}

    @classmethod
    def from_dict(cls, data: dict) -> "RobotState":
        return cls(
            position=np.array(data["position"], dtype=float),
            heading=float(data["heading"]),
            speed=float(data["speed"]),
        )


@dataclass(frozen=True)
class SimClock:
    step_index: int = 0
    dt: float = 0.1

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")

    def advanced(self) -> "SimClock":
        return SimClock(step_index=self.step_index + 1, dt=self.dt)


@dataclass
class Scenario:
    """Declarative episode setup; rectangles are (xmin, ymin, xmax, ymax)."""

    kind: str = "circle_crossing"
    pedestrian_count: int = 4
    circle_radius: float = 4.0
    static_obstacles: list[tuple[float, float, float, float]] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}, expected one of {SCENARIO_KINDS}")
        if self.circle_radius <= 0:
            raise ValueError("circle_radius must be > 0")
        if self.pedestrian_count < 0:
            raise ValueError("pedestrian_count must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pedestrian_count": self.pedestrian_count,
            "circle_radius": self.circle_radius,
            "static_obstacles": [list(r) for r in self.static_obstacles],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f for f in ("kind", "pedestrian_count", "circle_radius", "static_obstacles", "seed")}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "static_obstacles" in kwargs:
            kwargs["static_obstacles"] = [tuple(float(v) for v in r) for r in kwargs["static_obstacles"]]
        return cls(**kwargs)


@dataclass
class SocialForceParams:
    """Helbing-style force parameters; everything tunable lives here, not in code.

    Pedestrians treat the robot like another pedestrian (robot_repulsion);
    reactions stay smooth unless a pass gets inside roughly a meter, which
    is what the comfort metrics are meant to pick up. goal_cycling flips a
    pedestrian's goal to its antipode on arrival so crowds keep circulating
    instead of draining out of the scene; demo collection turns it on.
    """

    relaxation_time: float = 0.5
    desired_speed: float = 1.2
    max_speed: float = 1.8
    ped_radius: float = 0.25
    # strangers keep roughly half a meter of walking space from each other;
    # weaker settings let crossing waves pile into a slow clump at the focal
    # point, and a robot threading that clump collides with pedestrians that
    # sit between grid-cell centers where no feature can resolve them
    ped_repulsion_strength: float = 2.0
    ped_repulsion_range: float = 0.45
    obstacle_repulsion_strength: float = 3.0
    obstacle_repulsion_range: float = 0.25
    robot_repulsion: bool = True
    # strong enough that pedestrians give a moving robot about a meter of
    # berth, like people do; their evasive braking is what SVCR picks up
    robot_repulsion_strength: float = 3.0
    robot_repulsion_range: float = 0.6
    robot_radius: float = 0.25
    arrival_radius: float = 0.5
    max_robot_speed: float = 1.0
    omega_speed_floor: float = 0.05  # heading is undefined below this speed
    goal_cycling: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "SocialForceParams":
        return cls(**data)


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot of the simulation at one tick."""

    robot: RobotState
    robot_goal: np.ndarray
    pedestrians: tuple[PedestrianState, ...]
    obstacles: tuple[tuple[float, float, float, float], ...]
    clock: SimClock
    params: SocialForceParams

    def __post_init__(self) -> None:
        object.__setattr__(self, "robot_goal", _readonly(self.robot_goal))
        object.__setattr__(self, "pedestrians", tuple(self.pedestrians))
        object.__setattr__(self, "obstacles", tuple(tuple(map(float, r)) for r in self.obstacles))


def _circle_layout(scenario: Scenario, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Angles and goal angles for robot slot 0 plus one slot per pedestrian.

    Rejection-samples the per-seed jitter until every placement pair clears
    MIN_SPACING; raises when even the unjittered layout cannot fit.
    """
    slots = scenario.pedestrian_count + 1
    radius = scenario.circle_radius
    if slots > 1 and 2.0 * radius * math.sin(math.pi / slots) < MIN_SPACING:
        raise ValueError(
            f"{scenario.pedestrian_count} pedestrians cannot keep {MIN_SPACING} m spacing "
            f"on a circle of radius {radius}"
        )
    base = 2.0 * math.pi * np.arange(slots) / slots
    jitter_max = min(0.3 * 2.0 * math.pi / slots, 0.3)
    for _ in range(200):
        angles = base + rng.uniform(-jitter_max, jitter_max, size=slots)
        positions = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        if slots == 1:
            break
        diff = positions[:, None, :] - positions[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() >= MIN_SPACING:
            break
    else:
        raise ValueError("could not place pedestrians with the required spacing")
    # goals roughly antipodal; the jitter spreads crossing paths enough that
    # the crowd does not grind to a halt at a single focal point, capped so
    # every start-goal chord still passes within 1.4 m of the circle center
    # (chord-center distance = r*sin(jitter/2)) and therefore keeps crossing
    # the robot's own diameter path
    goal_jitter = min(0.7, 2.0 * math.asin(min(1.0, 1.39 / radius)))
    goal_angles = angles + math.pi + rng.uniform(-goal_jitter, goal_jitter, size=slots)
    goal_angles[0] = angles[0] + math.pi  # robot goal exactly antipodal
    return angles, goal_angles


def _spaced_points(
    rng: np.random.Generator, count: int, low: np.ndarray, high: np.ndarray
) -> np.ndarray:
    points: list[np.ndarray] = []
    for _ in range(count * 400):
        if len(points) == count:
            break
        p = rng.uniform(low, high)
        if all(np.linalg.norm(p - q) >= MIN_SPACING for q in points):
            points.append(p)
    if len(points) < count:
        raise ValueError(f"could not place {count} pedestrians with {MIN_SPACING} m spacing")
    return np.array(points).reshape(count, 2)


def make_scenario(
    scenario: Scenario, params: SocialForceParams | None = None, dt: float = 0.1
) -> WorldState:
    """Build the initial world for a scenario, deterministically per seed."""
    params = params or SocialForceParams()
    rng = np.random.default_rng(scenario.seed)
    obstacles = [tuple(map(float, r)) for r in scenario.static_obstacles]
    r = scenario.circle_radius

    if scenario.kind == "circle_crossing":
        angles, goal_angles = _circle_layout(scenario, rng)
        positions = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        goals = r * np.stack([np.cos(goal_angles), np.sin(goal_angles)], axis=1)
        robot_pos, robot_goal = positions[0], goals[0]
        ped_pos, ped_goals = positions[1:], goals[1:]
    elif scenario.kind == "corridor":
        half_width = 2.0
        wall = 0.5
        obstacles = obstacles + [
            (-r, half_width, r, half_width + wall),
            (-r, -half_width - wall, r, -half_width),
        ]
        robot_pos = np.array([-r + 0.5, 0.0])
        robot_goal = np.array([r - 0.5, 0.0])
        low = np.array([-r + 1.5, -half_width + 0.6])
        high = np.array([r - 1.5, half_width - 0.6])
        ped_pos = _spaced_points(rng, scenario.pedestrian_count, low, high)
        ped_goals = np.stack(
            [
                np.where(ped_pos[:, 0] > 0, -r + 0.5, r - 0.5),
                rng.uniform(-half_width + 0.6, half_width - 0.6, size=scenario.pedestrian_count),
            ],
            axis=1,
        ) if scenario.pedestrian_count else np.zeros((0, 2))
    else:  # random_goals
        low = np.array([-r, -r])
        high = np.array([r, r])
        placed = _spaced_points(rng, scenario.pedestrian_count + 1, low, high)
        robot_pos = placed[0]
        robot_goal = rng.uniform(low, high)
        ped_pos = placed[1:]
        ped_goals = rng.uniform(low, high, size=(scenario.pedestrian_count, 2))

    # individual walking speeds spread crossing times out; a single shared
    # speed makes every pedestrian arrive at the crossing zone simultaneously.
    # capped at 1.35 so departures from a standstill stay under the
    # velocity-change threshold (accel per tick = speed * dt / relaxation)
    speeds = rng.uniform(0.9, 1.35, size=scenario.pedestrian_count)
    pedestrians = tuple(
        PedestrianState(
            id=i,
            position=ped_pos[i],
            linear_velocity=np.zeros(2),
            angular_velocity=0.0,
            goal=ped_goals[i],
            preferred_speed=float(speeds[i]),
        )
        for i in range(scenario.pedestrian_count)
    )
    heading = math.atan2(robot_goal[1] - robot_pos[1], robot_goal[0] - robot_pos[0])
    robot = RobotState(position=robot_pos, heading=heading, speed=0.0)
    return WorldState(
        robot=robot,
        robot_goal=robot_goal,
        pedestrians=pedestrians,
        obstacles=tuple(obstacles),
        clock=SimClock(step_index=0, dt=dt),
        params=params,
    )


def _nearest_rect_point(p: np.ndarray, rect: tuple[float, float, float, float]) -> np.ndarray:
    xmin, ymin, xmax, ymax = rect
    return np.array([min(max(p[0], xmin), xmax), min(max(p[1], ymin), ymax)])


def social_forces(world: WorldState) -> np.ndarray:
    """Net social-force acceleration on each pedestrian, shape (N, 2)."""
    peds = world.pedestrians
    n = len(peds)
    if n == 0:
        return np.zeros((0, 2))
    p = world.params
    pos = np.stack([ped.position for ped in peds])
    vel = np.stack([ped.linear_velocity for ped in peds])
    goals = np.stack([ped.goal for ped in peds])

    # goal attraction: relax toward the desired velocity, tapering on arrival
    to_goal = goals - pos
    dist = np.linalg.norm(to_goal, axis=1)
    direction = np.divide(to_goal, dist[:, None], out=np.zeros_like(to_goal), where=dist[:, None] > 1e-9)
    desired = np.array([ped.preferred_speed if ped.preferred_speed > 0 else p.desired_speed for ped in peds])
    speed_cmd = desired * np.clip(dist / p.arrival_radius, 0.0, 1.0)
    forces = (direction * speed_cmd[:, None] - vel) / p.relaxation_time

    # pairwise repulsion
    if n > 1:
        diff = pos[:, None, :] - pos[None, :, :]
        d = np.linalg.norm(diff, axis=-1)
        np.fill_diagonal(d, np.inf)
        normal = diff / d[..., None]
        magnitude = p.ped_repulsion_strength * np.exp(
            (2.0 * p.ped_radius - d) / p.ped_repulsion_range
        )
        forces += (magnitude[..., None] * normal).sum(axis=1)

    # static obstacle repulsion against the nearest rectangle point
    for rect in world.obstacles:
        nearest = np.stack([_nearest_rect_point(q, rect) for q in pos])
        away = pos - nearest
        d = np.linalg.norm(away, axis=1)
        center = np.array([(rect[0] + rect[2]) / 2.0, (rect[1] + rect[3]) / 2.0])
        fallback = pos - center
        fb_norm = np.linalg.norm(fallback, axis=1)
        fallback = np.divide(
            fallback, fb_norm[:, None], out=np.tile([[1.0, 0.0]], (n, 1)), where=fb_norm[:, None] > 1e-9
        )
        normal = np.where(d[:, None] > 1e-9, away / np.maximum(d, 1e-9)[:, None], fallback)
        magnitude = p.obstacle_repulsion_strength * np.exp(
            (p.ped_radius - d) / p.obstacle_repulsion_range
        )
        forces += magnitude[:, None] * normal

    # the robot repels pedestrians (config-gated)
    if p.robot_repulsion:
        away = pos - world.robot.position
        d = np.linalg.norm(away, axis=1)
        normal = np.divide(away, d[:, None], out=np.zeros_like(away), where=d[:, None] > 1e-9)
        magnitude = p.robot_repulsion_strength * np.exp(
            (p.ped_radius + p.robot_radius - d) / p.robot_repulsion_range
        )
        forces += magnitude[:, None] * normal

    return forces


def _clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm > limit and norm > 0.0:
        return v * (limit / norm)
    return v


def step_world(world: WorldState, robot_command: np.ndarray, dt: float | None = None) -> WorldState:
    """Advance every agent one tick; clamping keeps the update total.

    Pedestrians follow social-force dynamics integrated semi-implicitly;
    the robot is kinematic and moves at the commanded velocity clamped to
    its speed limit. Pedestrian angular velocity is the per-step heading
    change of the velocity vector divided by dt.
    """
    dt = world.clock.dt if dt is None else float(dt)
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    p = world.params

    forces = social_forces(world)
    new_peds = []
    for ped, force in zip(world.pedestrians, forces):
        v_new = _clamp_norm(ped.linear_velocity + force * dt, p.max_speed)
        pos_new = ped.position + v_new * dt
        speed_old = float(np.linalg.norm(ped.linear_velocity))
        speed_new = float(np.linalg.norm(v_new))
        if speed_old > p.omega_speed_floor and speed_new > p.omega_speed_floor:
            omega = wrap_angle(
                math.atan2(v_new[1], v_new[0]) - math.atan2(ped.linear_velocity[1], ped.linear_velocity[0])
            ) / dt
        else:
            omega = 0.0
        goal = ped.goal
        if p.goal_cycling and float(np.linalg.norm(pos_new - goal)) <= p.arrival_radius:
            # turn around only once the arrival taper has all but stopped the
            # walk (below the heading floor): an instant flip at walking speed
            # registers as a velocity-change burst on the comfort metrics for
            # every in-window arrival, drowning out robot-caused reactions
            if speed_new <= 0.8 * p.omega_speed_floor:
                goal = -goal
        new_peds.append(
            PedestrianState(
                id=ped.id,
                position=pos_new,
                linear_velocity=v_new,
                angular_velocity=omega,
                goal=goal,
                preferred_speed=ped.preferred_speed,
            )
        )

    command = _clamp_norm(np.asarray(robot_command, dtype=float), p.max_robot_speed)
    speed = float(np.linalg.norm(command))
    heading = math.atan2(command[1], command[0]) if speed > 1e-9 else world.robot.heading
    robot = RobotState(
        position=world.robot.position + command * dt,
        heading=heading,
        speed=speed,
    )
    return WorldState(
        robot=robot,
        robot_goal=world.robot_goal,
        pedestrians=tuple(new_peds),
        obstacles=world.obstacles,
        clock=world.clock.advanced(),
        params=p,
    )


def pedestrians_in_window(world: WorldState, window: GridWindow) -> list[PedestrianState]:
    """Pedestrians whose position lies in the window's metric footprint."""
    return [ped for ped in world.pedestrians if window.contains(ped.position)]
