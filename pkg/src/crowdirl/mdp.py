"""Local MDP over grid cells: deterministic transitions, greedy and
maximum-entropy planning, and state-visitation propagation.

Reward maps are plain float arrays of length ``state_count`` (one scalar per
state, flat index ``iy * m_side + ix``).

The soft planner is finite-horizon and undiscounted: with ``V0 = r`` and
``Q_k(s, a) = r(s) + V_{k-1}(T(s, a))``, the induced time-varying policy
assigns every length-H action sequence probability proportional to
``exp(sum of state rewards along the path, endpoints included)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# (dx, dy) per action; order is the tie-break order everywhere
ACTIONS_5 = (("up", (0, 1)), ("down", (0, -1)), ("left", (-1, 0)), ("right", (1, 0)), ("stop", (0, 0)))
ACTIONS_9 = (
    ("up", (0, 1)),
    ("down", (0, -1)),
    ("left", (-1, 0)),
    ("right", (1, 0)),
    ("up_left", (-1, 1)),
    ("up_right", (1, 1)),
    ("down_left", (-1, -1)),
    ("down_right", (1, -1)),
    ("stop", (0, 0)),
)


@dataclass
class GridMdp:
    """m_side x m_side grid, deterministic moves, off-grid maps to self."""

    m_side: int = 3
    gamma_mdp: float = 0.9
    goal_state: int = 0
    eight_connected: bool = False
    transitions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.m_side < 2:
            raise ValueError(f"m_side must be >= 2, got {self.m_side}")
        if not 0 <= self.gamma_mdp < 1:
            raise ValueError(f"gamma_mdp must lie in [0, 1), got {self.gamma_mdp}")
        if not 0 <= self.goal_state < self.state_count:
            raise ValueError(f"goal_state {self.goal_state} out of range")
        m = self.m_side
        table = np.empty((self.state_count, self.action_count), dtype=int)
        for s in range(self.state_count):
            ix, iy = s % m, s // m
            for a, (_, (dx, dy)) in enumerate(self.actions):
                nx, ny = ix + dx, iy + dy
                table[s, a] = ny * m + nx if 0 <= nx < m and 0 <= ny < m else s
        table.flags.writeable = False
        self.transitions = table

    @property
    def actions(self) -> tuple:
        return ACTIONS_9 if self.eight_connected else ACTIONS_5

    @property
    def action_count(self) -> int:
        return len(self.actions)

    @property
    def state_count(self) -> int:
        return self.m_side * self.m_side

    def step(self, state: int, action: int) -> int:
        return int(self.transitions[state, action])


@dataclass(frozen=True)
class Policy:
    """Per-state action distributions, possibly time-varying.

    ``probs`` has shape (steps, state_count, action_count); slice t applies
    at time t. A stationary policy stores steps = 1.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 3:
            raise ValueError(f"probs must be 3-D (steps, states, actions), got shape {p.shape}")
        sums = p.sum(axis=2)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise ValueError("action distributions must sum to 1 per state")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def steps(self) -> int:
        return self.probs.shape[0]

    def action_probs(self, t: int = 0) -> np.ndarray:
        """Distribution matrix at time t; clamps past the last stored step."""
        return self.probs[min(t, self.steps - 1)]

    def greedy_actions(self, t: int = 0) -> np.ndarray:
        """Per-state argmax action; ties resolve to the lowest index."""
        return np.argmax(self.action_probs(t), axis=1)

    @classmethod
    def from_actions(cls, actions: np.ndarray, action_count: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((1, actions.shape[0], action_count))
        probs[0, np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs=probs)


def value_iteration(
    mdp: GridMdp, rewards: np.ndarray, tol: float = 1e-9, max_sweeps: int = 100_000
) -> tuple[np.ndarray, Policy]:
    """Optimal values and the greedy policy for V(s) = r(s) + g * max_a V(T(s,a)).

    Returned values satisfy the Bellman optimality equation within tol in
    sup norm; ties in the argmax break to the lowest action index.
    """
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    r = np.asarray(rewards, dtype=float)
    if r.shape != (mdp.state_count,):
        raise ValueError(f"rewards must have shape ({mdp.state_count},), got {r.shape}")
    values = np.array(r)
    for _ in range(max_sweeps):
        successor_values = values[mdp.transitions]  # (S, A)
        new_values = r + mdp.gamma_mdp * successor_values.max(axis=1)
        delta = float(np.abs(new_values - values).max())
        values = new_values
        if delta < tol:
            break
    actions = np.argmax(values[mdp.transitions], axis=1)
    return values, Policy.from_actions(actions, mdp.action_count)


def soft_value_iteration(mdp: GridMdp, rewards: np.ndarray, horizon: int) -> Policy:
    """Maximum-entropy finite-horizon planner via backward log-sum-exp.

    Slice t of the returned policy is the distribution with horizon - t
    steps remaining, so pairing it with ``expected_svf`` at the same horizon
    weights complete paths by exp(total state reward).
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    r = np.asarray(rewards, dtype=float)
    if r.shape != (mdp.state_count,):
        raise ValueError(f"rewards must have shape ({mdp.state_count},), got {r.shape}")
    values = np.array(r)  # V_0
    slices = []
    for _ in range(horizon):
        q = r[:, None] + values[mdp.transitions]  # (S, A)
        shift = q.max(axis=1, keepdims=True)
        values = (shift[:, 0] + np.log(np.exp(q - shift).sum(axis=1)))
        slices.append(np.exp(q - values[:, None]))
    # slices[k-1] is the k-steps-remaining policy; play longest lookahead first
    probs = np.stack(slices[::-1], axis=0)
    return Policy(probs=probs)


def expected_svf(mdp: GridMdp, policy: Policy, start_state: int, horizon: int) -> np.ndarray:
    """Expected state-visitation counts over horizon steps from start_state.

    Output sums to horizon + 1 (the start state counts). Policies shorter
    than the horizon repeat their final slice.
    """
    if not 0 <= start_state < mdp.state_count:
        raise ValueError(f"start_state {start_state} out of range")
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    mu_t = np.zeros(mdp.state_count)
    mu_t[start_state] = 1.0
    total = np.array(mu_t)
    for t in range(horizon):
        flow = mu_t[:, None] * policy.action_probs(t)  # (S, A)
        mu_next = np.zeros(mdp.state_count)
        np.add.at(mu_next, mdp.transitions.reshape(-1), flow.reshape(-1))
        mu_t = mu_next
        total += mu_t
    return total


def demo_svf(demonstrations: list[list[int]], mdp: GridMdp) -> np.ndarray:
    """Mean per-state visit counts over demonstrated state sequences."""
    if not demonstrations:
        raise ValueError("need at least one demonstration")
    counts = np.zeros(mdp.state_count)
    for states in demonstrations:
        for s in states:
            if not 0 <= s < mdp.state_count:
                raise ValueError(f"state {s} out of range for {mdp.m_side}x{mdp.m_side} grid")
            counts[s] += 1.0
    return counts / len(demonstrations)
