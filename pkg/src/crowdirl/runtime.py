"""Online planning, demonstration recording, and the evaluation harness.

Planning relays a greedy grid policy into velocity commands: every step a
fresh window is laid with the robot at the center of its rear edge facing
the active waypoint, features are built, the reward net scores the cells,
and value iteration picks the next cell to chase with a P-controller.

Demonstration windows are traversal-based: a window stays fixed until the
robot leaves its footprint, so each window carries a visited-cell sequence
for visitation matching and defines "inside" for SVCR counting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .features import FeatureConfig, build_feature_map, local_density, social_distance
from .geometry import GridWindow
from .mdp import GridMdp, value_iteration
from .reward_net import RewardModel, forward
from .sim import Scenario, SocialForceParams, WorldState, make_scenario, step_world
from .training import (
    Demonstration,
    SvcrConfig,
    WindowRecord,
    compute_svcr,
    pairwise_accuracy,
    path_length,
)

Commander = Callable[[WorldState, np.ndarray], np.ndarray]


@dataclass
class RuntimeConfig:
    # 5 cells of 1 m: the window spans 5 m, so the active waypoint (at most
    # waypoint_spacing + waypoint_reach ahead) always lands inside and there
    # is lateral room for learned detours. Finer grids were tried and make
    # things worse, not better: with small cells every net paints a crossing
    # pedestrian as a multi-cell blob that all policies route around the
    # same way, and the reward differences that ranking learns stop showing
    # up in behavior at all
    m_side: int = 5
    resolution: float = 1.0
    gamma_mdp: float = 0.9
    goal_radius: float = 0.3
    collision_radius: float = 0.3
    dock_radius: float = 1.5
    waypoint_spacing: float = 2.0
    waypoint_reach: float = 1.25
    timeout: float = 40.0
    kp: float = 2.0
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    svcr: SvcrConfig = field(default_factory=SvcrConfig)

    def to_dict(self) -> dict:
        out = dict(self.__dict__)
        out["feature"] = self.feature.to_dict()
        out["svcr"] = self.svcr.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RuntimeConfig":
        kwargs = dict(data)
        if "feature" in kwargs:
            kwargs["feature"] = FeatureConfig.from_dict(kwargs["feature"])
        if "svcr" in kwargs:
            kwargs["svcr"] = SvcrConfig.from_dict(kwargs["svcr"])
        return cls(**kwargs)


@dataclass
class EpisodeResult:
    success: bool
    navigation_time: float
    path_length: float
    invasion_count: int
    invasion_rate: float
    svcr: float
    collision: bool

    def __post_init__(self) -> None:
        if self.success and self.collision:
            raise ValueError("an episode cannot both succeed and collide")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def goal_seeking_model() -> RewardModel:
    """Hand-set linear model: reward = -(goal distance feature). Useful as a
    pre-training baseline and in tests."""
    return RewardModel(
        widths=[4, 1],
        weights=[np.array([[-1.0, 0.0, 0.0, 0.0]])],
        biases=[np.zeros(1)],
        seed=0,
    )


def waypoints_to(start: np.ndarray, goal: np.ndarray, spacing: float = 2.0) -> list[np.ndarray]:
    """Straight-line waypoints every ``spacing`` meters, goal always last."""
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    dist = float(np.linalg.norm(goal - start))
    if dist < 1e-9:
        return [goal]
    direction = (goal - start) / dist
    points = [start + k * spacing * direction for k in range(1, int(dist / spacing) + 1)]
    if not points or float(np.linalg.norm(points[-1] - goal)) > 1e-9:
        points.append(goal)
    return points


def plan_window(
    robot_position: np.ndarray,
    waypoint: np.ndarray,
    heading_fallback: float = 0.0,
    m_side: int = 3,
    resolution: float = 1.0,
) -> GridWindow:
    """Window with the robot at its rear-edge center, +x toward the waypoint."""
    robot_position = np.asarray(robot_position, dtype=float)
    waypoint = np.asarray(waypoint, dtype=float)
    delta = waypoint - robot_position
    if float(np.linalg.norm(delta)) > 1e-9:
        orientation = math.atan2(delta[1], delta[0])
    else:
        orientation = heading_fallback
    half = m_side * resolution / 2.0
    c, s = math.cos(orientation), math.sin(orientation)
    origin = robot_position - np.array([-s * half, c * half])
    return GridWindow(
        origin=(origin[0], origin[1]), orientation=orientation, m_side=m_side, resolution=resolution
    )


def plan_step(
    world: WorldState,
    waypoint: np.ndarray,
    model: RewardModel,
    config: RuntimeConfig | None = None,
) -> np.ndarray:
    """One planning cycle: window -> features -> rewards -> greedy cell -> velocity.

    Returns the zero command when the waypoint shares the robot's cell or
    the greedy action keeps the robot in place (stop or edge bump); a robot
    whose model keeps choosing stop waits the episode out and times out,
    learned yielding is supposed to be temporary.
    """
    config = config or RuntimeConfig()
    waypoint = np.asarray(waypoint, dtype=float)
    window = plan_window(
        world.robot.position, waypoint, world.robot.heading, config.m_side, config.resolution
    )
    robot_state = window.state_of(world.robot.position)
    if robot_state is None:  # numerically on the rear edge; treat as its cell
        robot_state = window.state_index(0, config.m_side // 2)
    if window.state_of(waypoint) == robot_state:
        return np.zeros(2)
    feature_map = build_feature_map(world, window, waypoint, config.feature)
    rewards = forward(model, feature_map)
    goal_state = window.state_of(waypoint)
    mdp = GridMdp(
        m_side=config.m_side,
        gamma_mdp=config.gamma_mdp,
        goal_state=goal_state if goal_state is not None else robot_state,
    )
    _, policy = value_iteration(mdp, rewards)
    action = int(policy.greedy_actions()[robot_state])
    next_state = mdp.step(robot_state, action)
    if next_state == robot_state:
        # staying put is the greedy choice (stop, or a bump into the window
        # edge): yield in place; the next replan decides whether to move on
        return np.zeros(2)
    target = window.cell_center_world(next_state % config.m_side, next_state // config.m_side)
    command = config.kp * (target - world.robot.position)
    speed = float(np.linalg.norm(command))
    limit = world.params.max_robot_speed
    if speed > limit:
        command *= limit / speed
    return command


class EpisodeRecorder:
    """Accumulates per-step state and traversal-based windows for one episode."""

    def __init__(self, config: RuntimeConfig):
        self.config = config
        self.robot_states = []
        self.pedestrian_history = []
        self.windows: list[WindowRecord] = []
        self._step = 0

    def observe(self, world: WorldState, waypoint: np.ndarray) -> None:
        """Record the current state; lay a new window if the robot left the
        old footprint. Call once per simulation state, before stepping.

        Visited sequences are cell-change sequences, consecutive repeats
        dropped: dwell time is deliberately not recorded, because demos of
        wildly different sample lengths let the ranking term order pairs by
        a global reward offset instead of by features (visitation matching
        cannot push back, it is invariant to constant reward shifts)."""
        self.robot_states.append(world.robot)
        self.pedestrian_history.append(list(world.pedestrians))
        position = world.robot.position
        current = self.windows[-1] if self.windows else None
        if current is None or not current.window.contains(position):
            window = plan_window(
                position, waypoint, world.robot.heading, self.config.m_side, self.config.resolution
            )
            state = window.state_of(position)
            if state is None:
                state = window.state_index(0, self.config.m_side // 2)
            feature_map = build_feature_map(world, window, np.asarray(waypoint), self.config.feature)
            self.windows.append(
                WindowRecord(
                    window=window,
                    feature_map=feature_map,
                    visited=[state],
                    start_step=self._step,
                    waypoint=(float(waypoint[0]), float(waypoint[1])),
                )
            )
        else:
            state = current.window.state_of(position)
            if state is not None and state != current.visited[-1]:
                current.visited.append(state)
        self._step += 1

    def finish(self, demo_id: str, dt: float, complete: bool = True) -> Demonstration:
        demo = Demonstration(
            id=demo_id,
            dt=dt,
            robot_states=list(self.robot_states),
            pedestrian_history=[list(step) for step in self.pedestrian_history],
            windows=list(self.windows),
            trajectory_length=path_length(self.robot_states),
            complete=complete,
        )
        if len(demo.pedestrian_history) >= 2:
            demo.n_s, demo.epsilon_s = compute_svcr(demo, self.config.svcr)
        return demo


def _social_radii(world: WorldState, config: RuntimeConfig) -> list[float]:
    params = config.feature.social
    return [
        social_distance(local_density(p, world.pedestrians, params.density_radius), params)
        for p in world.pedestrians
    ]


def _robot_in_obstacle(world: WorldState) -> bool:
    x, y = world.robot.position
    return any(xmin <= x <= xmax and ymin <= y <= ymax for xmin, ymin, xmax, ymax in world.obstacles)


def _active_waypoint_index(
    position: np.ndarray, points: list[np.ndarray], index: int, reach: float
) -> int:
    while index < len(points) - 1:
        to_current = float(np.linalg.norm(points[index] - position))
        gap = float(np.linalg.norm(points[index + 1] - points[index]))
        to_next = float(np.linalg.norm(points[index + 1] - position))
        if to_current < reach or to_next < gap:
            index += 1
        else:
            break
    return index


def run_world(
    world: WorldState,
    model: RewardModel | None,
    config: RuntimeConfig | None = None,
    commander: Commander | None = None,
    demo_id: str = "episode",
) -> tuple[EpisodeResult, Demonstration]:
    """Drive one episode to goal/collision/timeout; always returns the demo.

    The robot follows ``commander(world, waypoint)`` when given, otherwise
    plan_step under ``model`` with proportional docking inside dock_radius
    of the final goal.
    """
    config = config or RuntimeConfig()
    if model is None and commander is None:
        raise ValueError("need a reward model or an explicit commander")
    goal = np.array(world.robot_goal)
    points = waypoints_to(world.robot.position, goal, config.waypoint_spacing)
    wp_index = 0
    recorder = EpisodeRecorder(config)
    max_steps = int(round(config.timeout / world.clock.dt))
    success = False
    collision = False
    invasions = 0
    was_inside: dict[int, bool] = {}
    steps_taken = 0

    for step in range(max_steps + 1):
        radii = _social_radii(world, config)
        distances = {
            p.id: float(np.linalg.norm(world.robot.position - p.position))
            for p in world.pedestrians
        }
        inside = {p.id: distances[p.id] < r for p, r in zip(world.pedestrians, radii)}
        if step > 0:
            invasions += sum(
                1 for pid, now in inside.items() if now and not was_inside.get(pid, False)
            )
        was_inside = inside

        wp_index = _active_waypoint_index(
            world.robot.position, points, wp_index, config.waypoint_reach
        )
        recorder.observe(world, points[wp_index])
        steps_taken = step

        if float(np.linalg.norm(world.robot.position - goal)) <= config.goal_radius:
            success = True
            break
        if distances and min(distances.values()) < config.collision_radius or _robot_in_obstacle(world):
            collision = True
            break
        if step == max_steps:
            break

        if commander is not None:
            command = np.asarray(commander(world, points[wp_index]), dtype=float)
        elif float(np.linalg.norm(world.robot.position - goal)) <= config.dock_radius:
            command = config.kp * (goal - world.robot.position)
        else:
            command = plan_step(world, points[wp_index], model, config)
        world = step_world(world, command)

    demo = recorder.finish(demo_id, world.clock.dt, complete=True)
    length = demo.trajectory_length
    result = EpisodeResult(
        success=success,
        navigation_time=steps_taken * world.clock.dt,
        path_length=length,
        invasion_count=invasions,
        invasion_rate=invasions / length if length > 0 else 0.0,
        svcr=demo.epsilon_s,
        collision=collision,
    )
    return result, demo


def run_episode(
    scenario: Scenario,
    model: RewardModel | None,
    timeout: float | None = None,
    config: RuntimeConfig | None = None,
    params: SocialForceParams | None = None,
    commander: Commander | None = None,
    demo_id: str | None = None,
) -> EpisodeResult:
    config = config or RuntimeConfig()
    if timeout is not None:
        config = replace(config, timeout=timeout)
    world = make_scenario(scenario, params)
    result, _ = run_world(
        world, model, config, commander, demo_id or f"{scenario.kind}-{scenario.seed}"
    )
    return result


class ScriptedExpert:
    """Careful waypoint chaser that becomes reckless with noise.

    The clean behavior re-plans every tick: chase the waypoint, yield (slow
    to a stop) while moving pedestrians are approaching within yield_radius
    so crossing waves pass first, and push away from anyone already inside
    avoid_radius. Sub-optimality mimics a sloppy human operator: with
    probability p_noise per decision the next burst_ticks are replaced by a
    held full-tilt lurch roughly toward the waypoint with the yielding
    skipped. Bursts stay goal-directed on purpose; if noise made the route
    wander, path shape alone would give the demo's social quality away and
    the reward net could rank demos without ever reading the crowd."""

    def __init__(
        self,
        p_noise: float = 0.0,
        seed: int = 0,
        avoid_radius: float = 1.4,
        yield_radius: float = 2.4,
        decision_ticks: int = 4,
        burst_ticks: int = 8,
        burst_speed: float = 0.8,
        burst_spread: float = 1.3,
    ):
        if not 0 <= p_noise <= 1:
            raise ValueError(f"p_noise must lie in [0, 1], got {p_noise}")
        if decision_ticks < 1 or burst_ticks < 1:
            raise ValueError("decision_ticks and burst_ticks must be >= 1")
        self.p_noise = p_noise
        self.avoid_radius = avoid_radius
        self.yield_radius = yield_radius
        self.decision_ticks = decision_ticks
        self.burst_ticks = burst_ticks
        self.burst_speed = burst_speed
        self.burst_spread = burst_spread
        self.rng = np.random.default_rng(seed)
        self._cooldown = 0
        self._burst: np.ndarray | None = None
        self._burst_left = 0

    def __call__(self, world: WorldState, waypoint: np.ndarray) -> np.ndarray:
        limit = world.params.max_robot_speed
        if self._burst_left > 0:
            self._burst_left -= 1
            return self._burst
        if self._cooldown == 0:
            self._cooldown = self.decision_ticks
            if self.p_noise > 0 and self.rng.random() < self.p_noise:
                to_wp = np.asarray(waypoint, dtype=float) - world.robot.position
                if float(np.linalg.norm(to_wp)) > 1e-9:
                    bearing = math.atan2(to_wp[1], to_wp[0])
                else:
                    bearing = world.robot.heading
                angle = bearing + self.rng.uniform(-self.burst_spread, self.burst_spread)
                self._burst = self.burst_speed * limit * np.array([math.cos(angle), math.sin(angle)])
                self._burst_left = self.burst_ticks - 1
                return self._burst
        self._cooldown -= 1
        robot_pos = world.robot.position
        threat = math.inf
        avoid = np.zeros(2)
        for ped in world.pedestrians:
            away = robot_pos - ped.position
            dist = float(np.linalg.norm(away))
            if dist < 1e-9:
                continue
            if dist < self.avoid_radius:
                avoid += 4.0 * (self.avoid_radius - dist) / dist * away
            # only moving pedestrians headed our way demand a yield; parked
            # ones are walked around instead (no deadlock)
            if ped.speed > 0.3 and float(np.dot(ped.linear_velocity, away)) > 0:
                threat = min(threat, dist)
        scale = min(max((threat - 1.1) / (self.yield_radius - 1.1), 0.0), 1.0)
        command = scale * 2.0 * (np.asarray(waypoint, dtype=float) - robot_pos) + avoid
        speed = float(np.linalg.norm(command))
        if speed > limit:
            command *= limit / speed
        return command


def collect_demo(
    scenario: Scenario,
    command_source: Commander,
    config: RuntimeConfig | None = None,
    params: SocialForceParams | None = None,
    demo_id: str | None = None,
) -> Demonstration:
    """Record one commanded episode as a Demonstration (SVCR included).

    Collection keeps the crowd circulating (goal_cycling) by default so a
    slow or clumsy operator still meets pedestrians instead of an emptied
    scene; pass explicit params to override."""
    config = config or RuntimeConfig()
    if params is None:
        params = SocialForceParams(goal_cycling=True)
    world = make_scenario(scenario, params)
    _, demo = run_world(
        world,
        model=None,
        config=config,
        commander=command_source,
        demo_id=demo_id or f"{scenario.kind}-{scenario.seed}",
    )
    return demo


def evaluate(
    model: RewardModel | None,
    scenarios: list[Scenario],
    episodes: int = 1,
    config: RuntimeConfig | None = None,
    params: SocialForceParams | None = None,
    commander: Commander | None = None,
    held_out: list[Demonstration] | None = None,
) -> dict:
    """Aggregate metrics over seeded episodes; deterministic for fixed inputs.

    Each scenario is run ``episodes`` times with seeds seed, seed+1, ...
    Mean navigation time covers successful episodes only and is None when
    every episode failed.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    config = config or RuntimeConfig()
    rows = []
    all_results: list[EpisodeResult] = []
    for scenario in scenarios:
        results = []
        for k in range(episodes):
            seeded = replace(scenario, seed=scenario.seed + k)
            results.append(
                run_episode(seeded, model, config=config, params=params, commander=commander)
            )
        all_results.extend(results)
        rows.append({"scenario": scenario.to_dict(), **_aggregate(results, episodes)})
    report = {"scenarios": rows, "overall": _aggregate(all_results, len(all_results))}
    if held_out is not None:
        report["held_out_pairwise_accuracy"] = pairwise_accuracy(held_out, model)
    return report


def _aggregate(results: list[EpisodeResult], episodes: int) -> dict:
    times = [r.navigation_time for r in results if r.success]
    return {
        "episodes": episodes,
        "success_rate": sum(r.success for r in results) / episodes,
        "collision_rate": sum(r.collision for r in results) / episodes,
        "mean_time": sum(times) / len(times) if times else None,
        "mean_invasion_rate": sum(r.invasion_rate for r in results) / episodes,
        "mean_svcr": sum(r.svcr for r in results) / episodes,
        "mean_path_length": sum(r.path_length for r in results) / episodes,
    }
