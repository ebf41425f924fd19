"""Reward training from ranked demonstrations.

Demonstrations carry the recorded episode (robot states, pedestrian history,
per-window features and visited cells) plus their sudden-velocity-change
rate (SVCR), which ranks them: lower SVCR means the crowd was disturbed
less, so that demo should earn higher trajectory reward.

Training combines two gradient sources per sampled demo pair:
  - visitation matching: per window, push rewards so the max-entropy
    policy's expected visitation equals the demonstrated visitation;
  - pairwise ranking: logistic loss on trajectory-reward order whenever the
    pair's SVCRs differ, weighted by ``rank_weight``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap
from .geometry import GridWindow
from .mdp import GridMdp, demo_svf, expected_svf, soft_value_iteration
from .reward_net import (
    AdamState,
    GradientAccumulator,
    RewardModel,
    apply_update,
    backward,
    forward,
    init_model,
)
from .sim import PedestrianState, RobotState

logger = logging.getLogger(__name__)


@dataclass
class SvcrConfig:
    v_thrd: float = 0.3
    omega_thrd: float = 0.5

    def __post_init__(self) -> None:
        if self.v_thrd <= 0 or self.omega_thrd <= 0:
            raise ValueError("thresholds must be > 0")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "SvcrConfig":
        return cls(**data)


@dataclass
class WindowRecord:
    """One grid-window traversal: where it was laid, what the robot saw, and
    the collapsed sequence of cells the robot moved through."""

    window: GridWindow
    feature_map: FeatureMap
    visited: list[int]
    start_step: int
    waypoint: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "window": self.window.to_dict(),
            "feature_map": self.feature_map.to_dict(),
            "visited": list(self.visited),
            "start_step": self.start_step,
            "waypoint": [self.waypoint[0], self.waypoint[1]],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WindowRecord":
        return cls(
            window=GridWindow.from_dict(data["window"]),
            feature_map=FeatureMap.from_dict(data["feature_map"]),
            visited=[int(s) for s in data["visited"]],
            start_step=int(data["start_step"]),
            waypoint=(float(data["waypoint"][0]), float(data["waypoint"][1])),
        )


@dataclass
class Demonstration:
    """One recorded episode plus its ranking score."""

    id: str
    dt: float
    robot_states: list[RobotState]
    pedestrian_history: list[list[PedestrianState]]
    windows: list[WindowRecord]
    trajectory_length: float
    n_s: int = 0
    epsilon_s: float = 0.0
    complete: bool = True

    def __post_init__(self) -> None:
        if self.trajectory_length < 0:
            raise ValueError("trajectory_length must be >= 0")
        if self.trajectory_length > 0:
            expected = self.n_s / self.trajectory_length
            if not math.isclose(self.epsilon_s, expected, rel_tol=0, abs_tol=1e-9):
                raise ValueError(
                    f"epsilon_s {self.epsilon_s} inconsistent with n_s/l_R = {expected}"
                )
        elif self.epsilon_s != 0.0:
            raise ValueError("epsilon_s must be 0 for a zero-length trajectory")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "dt": self.dt,
            "robot_states": [rs.to_dict() for rs in self.robot_states],
            "pedestrian_history": [
                [p.to_dict() for p in step] for step in self.pedestrian_history
            ],
            "windows": [w.to_dict() for w in self.windows],
            "trajectory_length": self.trajectory_length,
            "n_s": self.n_s,
            "epsilon_s": self.epsilon_s,
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Demonstration":
        return cls(
            id=data["id"],
            dt=float(data["dt"]),
            robot_states=[RobotState.from_dict(d) for d in data["robot_states"]],
            pedestrian_history=[
                [PedestrianState.from_dict(d) for d in step]
                for step in data["pedestrian_history"]
            ],
            windows=[WindowRecord.from_dict(d) for d in data["windows"]],
            trajectory_length=float(data["trajectory_length"]),
            n_s=int(data["n_s"]),
            epsilon_s=float(data["epsilon_s"]),
            complete=bool(data.get("complete", True)),
        )


@dataclass
class TrainingConfig:
    epochs: int = 200
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    rank_weight: float = 1.0
    horizon: int = 64
    seed: int = 0
    pairs_per_epoch: int = 8
    gamma_mdp: float = 0.9

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.pairs_per_epoch < 1 or self.horizon < 1:
            raise ValueError("epochs, pairs_per_epoch and horizon must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0 or self.rank_weight < 0:
            raise ValueError("weight_decay and rank_weight must be >= 0")
        if not 0 <= self.gamma_mdp < 1:
            raise ValueError("gamma_mdp must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        return cls(**data)


def path_length(robot_states: list[RobotState]) -> float:
    """Sum of step displacements l_R."""
    total = 0.0
    for before, after in zip(robot_states[:-1], robot_states[1:]):
        total += float(np.linalg.norm(after.position - before.position))
    return total


def _active_window(demo: Demonstration, step: int) -> GridWindow | None:
    """The window in force at a world step (latest one laid at or before it)."""
    active = None
    for record in demo.windows:
        if record.start_step <= step:
            active = record.window
        else:
            break
    return active


def compute_svcr(demo: Demonstration, config: SvcrConfig | None = None) -> tuple[int, float]:
    """Count in-window pedestrians with sudden velocity changes, per meter.

    For every consecutive step pair and pedestrian: the event fires when the
    pedestrian sits inside the currently active window footprint and either
    the linear velocity changed by at least v_thrd or the angular velocity
    by at least omega_thrd (boundary counts). Returns (n_s, n_s / l_R),
    with the rate defined as 0 for a zero-length trajectory.
    """
    config = config or SvcrConfig()
    steps = len(demo.pedestrian_history)
    if steps < 2:
        raise ValueError(f"demo must span >= 2 time steps, got {steps}")
    n_s = 0
    for t in range(1, steps):
        window = _active_window(demo, t)
        if window is None:
            continue
        previous = {p.id: p for p in demo.pedestrian_history[t - 1]}
        for ped in demo.pedestrian_history[t]:
            before = previous.get(ped.id)
            if before is None:
                continue
            if not window.contains(ped.position):
                continue
            dv = float(np.linalg.norm(before.linear_velocity - ped.linear_velocity))
            dw = abs(before.angular_velocity - ped.angular_velocity)
            if dv >= config.v_thrd or dw >= config.omega_thrd:
                n_s += 1
    l_r = demo.trajectory_length
    return n_s, (n_s / l_r if l_r > 0 else 0.0)


def _discounted_visit_weights(demo: Demonstration, gamma_mdp: float) -> list[np.ndarray]:
    """Per-window per-state weights: sum of gamma^k over visits, k global."""
    weights = []
    k = 0
    for record in demo.windows:
        w = np.zeros(record.window.state_count)
        for s in record.visited:
            w[s] += gamma_mdp**k
            k += 1
        weights.append(w)
    return weights


def trajectory_reward(demo: Demonstration, model: RewardModel, gamma_mdp: float = 0.9) -> float:
    """Discounted cumulative reward over all visited cells, windows chained."""
    if not demo.windows:
        raise ValueError("demo has no windows")
    total = 0.0
    for record, weights in zip(demo.windows, _discounted_visit_weights(demo, gamma_mdp)):
        rewards = forward(model, record.feature_map)
        total += float(weights @ rewards)
    return total


def trajectory_reward_gradient(
    demo: Demonstration, model: RewardModel, gamma_mdp: float = 0.9
) -> GradientAccumulator:
    """d(trajectory_reward)/d(theta)."""
    grad = GradientAccumulator.zeros_like(model)
    for record, weights in zip(demo.windows, _discounted_visit_weights(demo, gamma_mdp)):
        grad.add(backward(model, record.feature_map, weights))
    return grad


def _sigmoid(x: float) -> float:
    return float(np.exp(-np.logaddexp(0.0, -x)))


def ranking_loss(
    r_i: float, r_j: float, eps_i: float, eps_j: float
) -> tuple[float, float, float]:
    """Pairwise logistic loss asking the better demo (j, lower SVCR) to win.

    Returns (loss, d loss/d r_i, d loss/d r_j); loss = -log sigmoid(r_j - r_i)
    evaluated overflow-safe.
    """
    if not eps_j < eps_i:
        raise ValueError(f"expected eps_j < eps_i (j is the better demo), got {eps_j} >= {eps_i}")
    loss = float(np.logaddexp(0.0, r_i - r_j))
    s = _sigmoid(r_i - r_j)
    return loss, s, -s


def _window_visitation_error(
    record: WindowRecord, model: RewardModel, horizon_cap: int
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """(descent error E[mu]-mu_D, rewards, svf L1 gap, demo log-likelihood)."""
    visited = record.visited[: horizon_cap + 1]
    mdp = GridMdp(m_side=record.window.m_side, goal_state=visited[-1])
    rewards = forward(model, record.feature_map)
    mu_demo = demo_svf([visited], mdp)
    horizon = len(visited) - 1
    if horizon == 0:
        zero = np.zeros(mdp.state_count)
        return zero, rewards, 0.0, 0.0
    policy = soft_value_iteration(mdp, rewards, horizon)
    mu_model = expected_svf(mdp, policy, visited[0], horizon)
    log_lik = 0.0
    for t, (s, s_next) in enumerate(zip(visited[:-1], visited[1:])):
        action = int(np.argmax(mdp.transitions[s] == s_next))
        log_lik += float(np.log(max(policy.action_probs(t)[s, action], 1e-300)))
    return mu_model - mu_demo, rewards, float(np.abs(mu_demo - mu_model).sum()), log_lik


def _medirl_gradient(
    demo: Demonstration, model: RewardModel, config: TrainingConfig
) -> tuple[GradientAccumulator, float, float]:
    """Visitation-matching descent gradient plus (svf_l1, log_likelihood).

    The gradient is the mean over the demo's windows, not the sum, so a long
    recording carries the same weight in a sampled pair as a short one and
    the ranking term stays commensurate at rank_weight 1."""
    grad = GradientAccumulator.zeros_like(model)
    svf_l1 = 0.0
    log_lik = 0.0
    windows = GradientAccumulator.zeros_like(model)
    for record in demo.windows:
        error, _, gap, ll = _window_visitation_error(record, model, config.horizon)
        if np.any(error):
            windows.add(backward(model, record.feature_map, error))
        svf_l1 += gap
        log_lik += ll
    if demo.windows:
        grad.add(windows, scale=1.0 / len(demo.windows))
    return grad, svf_l1, log_lik


def train_epoch(
    dataset: list[Demonstration],
    model: RewardModel,
    config: TrainingConfig,
    rng: np.random.Generator | None = None,
    opt: AdamState | None = None,
) -> tuple[RewardModel, dict]:
    """One epoch of paired updates; returns the updated model and stats.

    Each sampled pair contributes the visitation-matching gradient of both
    demos plus, when their SVCRs differ, the rank_weight-scaled ranking
    gradient through the trajectory rewards. rank_weight = 0 reduces exactly
    to plain visitation matching.
    """
    if len(dataset) < 2:
        raise ValueError("need at least 2 demonstrations")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    opt = opt if opt is not None else AdamState(
        learning_rate=config.learning_rate, weight_decay=config.weight_decay
    )
    stats = {
        "ranking_loss": 0.0,
        "svf_l1": 0.0,
        "log_likelihood": 0.0,
        "ranked_pairs": 0,
        "tied_pairs": 0,
    }
    for _ in range(config.pairs_per_epoch):
        i, j = rng.choice(len(dataset), size=2, replace=False)
        demo_i, demo_j = dataset[int(i)], dataset[int(j)]
        grad = GradientAccumulator.zeros_like(model)
        for demo in (demo_i, demo_j):
            g, gap, ll = _medirl_gradient(demo, model, config)
            grad.add(g)
            stats["svf_l1"] += gap
            stats["log_likelihood"] += ll
        if demo_i.epsilon_s == demo_j.epsilon_s:
            stats["tied_pairs"] += 1
        elif config.rank_weight > 0.0:
            worse, better = (
                (demo_i, demo_j) if demo_i.epsilon_s > demo_j.epsilon_s else (demo_j, demo_i)
            )
            r_worse = trajectory_reward(worse, model, config.gamma_mdp)
            r_better = trajectory_reward(better, model, config.gamma_mdp)
            loss, dl_dworse, dl_dbetter = ranking_loss(
                r_worse, r_better, worse.epsilon_s, better.epsilon_s
            )
            stats["ranking_loss"] += loss
            stats["ranked_pairs"] += 1
            grad.add(
                trajectory_reward_gradient(worse, model, config.gamma_mdp),
                scale=config.rank_weight * dl_dworse,
            )
            grad.add(
                trajectory_reward_gradient(better, model, config.gamma_mdp),
                scale=config.rank_weight * dl_dbetter,
            )
        else:
            stats["ranked_pairs"] += 1
        model = apply_update(model, grad, opt)
    if stats["tied_pairs"] == config.pairs_per_epoch:
        logger.info("all sampled pairs tied on SVCR; epoch used visitation matching only")
    return model, stats


def train(
    dataset: list[Demonstration],
    config: TrainingConfig | None = None,
    model: RewardModel | None = None,
) -> tuple[RewardModel, list[dict]]:
    """Full training run, deterministic for a given (dataset, config)."""
    config = config or TrainingConfig()
    model = model if model is not None else init_model(seed=config.seed)
    rng = np.random.default_rng(config.seed)
    opt = AdamState(learning_rate=config.learning_rate, weight_decay=config.weight_decay)
    history = []
    for epoch in range(config.epochs):
        model, stats = train_epoch(dataset, model, config, rng=rng, opt=opt)
        stats["epoch"] = epoch
        stats["pairwise_accuracy"] = pairwise_accuracy(dataset, model, config.gamma_mdp)
        history.append(stats)
    return model, history


def pairwise_accuracy(
    dataset: list[Demonstration], model: RewardModel, gamma_mdp: float = 0.9
) -> float | None:
    """Fraction of distinct-SVCR pairs where the higher-SVCR demo earns
    strictly lower discounted reward; None when no pair qualifies."""
    if len(dataset) < 2:
        raise ValueError("need at least 2 demonstrations")
    rewards = [trajectory_reward(d, model, gamma_mdp) for d in dataset]
    correct = 0
    total = 0
    for a in range(len(dataset)):
        for b in range(a + 1, len(dataset)):
            eps_a, eps_b = dataset[a].epsilon_s, dataset[b].epsilon_s
            if eps_a == eps_b:
                continue
            total += 1
            worse, better = (a, b) if eps_a > eps_b else (b, a)
            if rewards[worse] < rewards[better]:
                correct += 1
    if total == 0:
        return None
    return correct / total
