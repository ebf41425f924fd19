"""Fully-connected reward network r = f(phi; theta) with analytic gradients.

Two tanh hidden layers and a linear scalar head (widths default [4, 32, 32, 1]).
Everything is plain numpy: forward, reverse-mode backward, and an Adam update
with decoupled L2 weight decay. Checkpoints are versioned JSON; Python float
repr round-trips bit-exactly, so save/load is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class RewardModel:
    widths: list[int]
    weights: list[np.ndarray]  # weights[l] has shape (widths[l+1], widths[l])
    biases: list[np.ndarray]
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or self.widths[-1] != 1:
            raise ValueError(f"widths must end in 1 and have >= 2 entries, got {self.widths}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match widths")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.widths[l + 1], self.widths[l])
            if w.shape != expect or b.shape != (self.widths[l + 1],):
                raise ValueError(f"layer {l} shapes {w.shape}/{b.shape} do not match widths {expect}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")

    @property
    def n_features(self) -> int:
        return self.widths[0]

    def copy(self) -> "RewardModel":
        return RewardModel(
            widths=list(self.widths),
            weights=[np.array(w) for w in self.weights],
            biases=[np.array(b) for b in self.biases],
            seed=self.seed,
        )


@dataclass
class GradientAccumulator:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: RewardModel) -> "GradientAccumulator":
        return cls(
            d_weights=[np.zeros_like(w) for w in model.weights],
            d_biases=[np.zeros_like(b) for b in model.biases],
        )

    def add(self, other: "GradientAccumulator", scale: float = 1.0) -> "GradientAccumulator":
        for mine, theirs in zip(self.d_weights, other.d_weights):
            mine += scale * theirs
        for mine, theirs in zip(self.d_biases, other.d_biases):
            mine += scale * theirs
        return self


def init_model(widths: list[int] | None = None, seed: int = 0) -> RewardModel:
    """Symmetric uniform init scaled by 1/sqrt(fan_in), reproducible per seed."""
    widths = list(widths) if widths is not None else [4, 32, 32, 1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return RewardModel(widths=widths, weights=weights, biases=biases, seed=seed)


def _features_matrix(features) -> np.ndarray:
    x = features.as_matrix() if hasattr(features, "as_matrix") else np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D (states, n_features), got shape {x.shape}")
    return x


def _forward_pass(model: RewardModel, x: np.ndarray) -> list[np.ndarray]:
    """All layer activations; entry 0 is the input, the last is (S, 1)."""
    if x.shape[1] != model.n_features:
        raise ValueError(f"feature dimension {x.shape[1]} != model input width {model.n_features}")
    activations = [x]
    h = x
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        h = z if l == last else np.tanh(z)
        activations.append(h)
    return activations


def forward(model: RewardModel, features) -> np.ndarray:
    """Per-state rewards, shape (state_count,)."""
    return _forward_pass(model, _features_matrix(features))[-1][:, 0]


def backward(model: RewardModel, features, per_state_error: np.ndarray) -> GradientAccumulator:
    """Gradient of sum_s error(s) * r(s) with respect to every parameter."""
    x = _features_matrix(features)
    error = np.asarray(per_state_error, dtype=float)
    if error.shape != (x.shape[0],):
        raise ValueError(f"error must have shape ({x.shape[0]},), got {error.shape}")
    activations = _forward_pass(model, x)
    grad = GradientAccumulator.zeros_like(model)
    delta = error[:, None]  # d(loss)/d(output), linear head
    for l in range(len(model.weights) - 1, -1, -1):
        grad.d_weights[l][:] = delta.T @ activations[l]
        grad.d_biases[l][:] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l]) * (1.0 - activations[l] ** 2)
    return grad


@dataclass
class AdamState:
    """Adam moments plus decoupled L2 decay applied to weights only."""

    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)

    def ensure_buffers(self, model: RewardModel) -> None:
        if not self.m_weights:
            self.m_weights = [np.zeros_like(w) for w in model.weights]
            self.v_weights = [np.zeros_like(w) for w in model.weights]
            self.m_biases = [np.zeros_like(b) for b in model.biases]
            self.v_biases = [np.zeros_like(b) for b in model.biases]


def apply_update(model: RewardModel, gradient: GradientAccumulator, opt: AdamState) -> RewardModel:
    """One descent step; returns a new model, mutates the optimizer state."""
    opt.ensure_buffers(model)
    opt.step += 1
    t = opt.step
    bias1 = 1.0 - opt.beta1**t
    bias2 = 1.0 - opt.beta2**t
    new_weights, new_biases = [], []
    for l, w in enumerate(model.weights):
        g = gradient.d_weights[l]
        opt.m_weights[l] = opt.beta1 * opt.m_weights[l] + (1.0 - opt.beta1) * g
        opt.v_weights[l] = opt.beta2 * opt.v_weights[l] + (1.0 - opt.beta2) * g**2
        step = opt.m_weights[l] / bias1 / (np.sqrt(opt.v_weights[l] / bias2) + opt.eps)
        new_weights.append(w - opt.learning_rate * (step + opt.weight_decay * w))
    for l, b in enumerate(model.biases):
        g = gradient.d_biases[l]
        opt.m_biases[l] = opt.beta1 * opt.m_biases[l] + (1.0 - opt.beta1) * g
        opt.v_biases[l] = opt.beta2 * opt.v_biases[l] + (1.0 - opt.beta2) * g**2
        step = opt.m_biases[l] / bias1 / (np.sqrt(opt.v_biases[l] / bias2) + opt.eps)
        new_biases.append(b - opt.learning_rate * step)
    return RewardModel(widths=list(model.widths), weights=new_weights, biases=new_biases, seed=model.seed)


def save_checkpoint(model: RewardModel, path: str | Path) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "widths": model.widths,
        "seed": model.seed,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> RewardModel:
    payload = json.loads(Path(path).read_text())
    version = payload.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return RewardModel(
        widths=list(payload["widths"]),
        weights=[np.array(w, dtype=float) for w in payload["weights"]],
        biases=[np.array(b, dtype=float) for b in payload["biases"]],
        seed=payload["seed"],
    )
