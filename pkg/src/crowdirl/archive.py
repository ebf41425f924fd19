"""Line-delimited demonstration archive.

First line is a header (format version, scenario, dt, runtime config), each
following line is one full Demonstration. Floats serialize via Python repr,
which round-trips bit-exactly, so reloaded archives replay losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import build_feature_map
from .runtime import RuntimeConfig
from .sim import Scenario, SimClock, SocialForceParams, WorldState, make_scenario
from .training import Demonstration, compute_svcr

ARCHIVE_VERSION = 1


@dataclass
class DemoArchive:
    scenario: Scenario | None = None
    dt: float = 0.1
    config: RuntimeConfig = field(default_factory=RuntimeConfig)
    demos: list[Demonstration] = field(default_factory=list)

    def append(self, demo: Demonstration) -> None:
        self.demos.append(demo)

    def training_demos(self) -> list[Demonstration]:
        """Demos eligible for training (incomplete recordings excluded)."""
        return [d for d in self.demos if d.complete]

    def save(self, path: str | Path) -> None:
        header = {
            "version": ARCHIVE_VERSION,
            "kind": "demo_archive",
            "scenario": self.scenario.to_dict() if self.scenario else None,
            "dt": self.dt,
            "config": self.config.to_dict(),
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(json.dumps(d.to_dict(), sort_keys=True) for d in self.demos)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DemoArchive":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"{path} is empty")
        header = json.loads(lines[0])
        if header.get("kind") != "demo_archive" or header.get("version") != ARCHIVE_VERSION:
            raise ValueError(f"{path} is not a version-{ARCHIVE_VERSION} demo archive")
        scenario = Scenario.from_dict(header["scenario"]) if header["scenario"] else None
        return cls(
            scenario=scenario,
            dt=float(header["dt"]),
            config=RuntimeConfig.from_dict(header["config"]),
            demos=[Demonstration.from_dict(json.loads(line)) for line in lines[1:] if line],
        )


def replay_world(
    archive: DemoArchive, demo: Demonstration, step: int, params: SocialForceParams | None = None
) -> WorldState:
    """Reconstruct the world snapshot at one recorded step of a demo."""
    params = params or SocialForceParams()
    if archive.scenario is not None:
        base = make_scenario(archive.scenario, params)
        obstacles, goal = base.obstacles, base.robot_goal
    else:
        obstacles, goal = (), demo.robot_states[-1].position
    return WorldState(
        robot=demo.robot_states[step],
        robot_goal=np.array(goal),
        pedestrians=tuple(demo.pedestrian_history[step]),
        obstacles=obstacles,
        clock=SimClock(step_index=step, dt=demo.dt),
        params=params,
    )


def verify_replay(archive: DemoArchive, demo: Demonstration) -> None:
    """Check the archive's lossless-replay contract for one demo.

    Recomputes every stored feature map from the raw states and the SVCR
    from scratch; raises AssertionError on any mismatch (bit-exact for
    features, exact for n_s).
    """
    for record in demo.windows:
        world = replay_world(archive, demo, record.start_step)
        rebuilt = build_feature_map(
            world, record.window, np.array(record.waypoint), archive.config.feature
        )
        for name, layer in record.feature_map.layers.items():
            if not np.array_equal(rebuilt.layers[name], layer):
                raise AssertionError(
                    f"demo {demo.id}: layer {name!r} of window at step "
                    f"{record.start_step} does not replay bit-exactly"
                )
    if len(demo.pedestrian_history) >= 2:
        n_s, epsilon_s = compute_svcr(demo, archive.config.svcr)
        if n_s != demo.n_s or epsilon_s != demo.epsilon_s:
            raise AssertionError(
                f"demo {demo.id}: stored SVCR ({demo.n_s}, {demo.epsilon_s}) "
                f"!= recomputed ({n_s}, {epsilon_s})"
            )
