"""Shared helpers for the test suite."""

import numpy as np
import pytest

from crowdirl.sim import PedestrianState, RobotState, SimClock, SocialForceParams, WorldState


def make_ped(ped_id=0, position=(0.0, 0.0), velocity=(0.0, 0.0), omega=0.0, goal=(0.0, 0.0), preferred_speed=0.0):
    return PedestrianState(
        id=ped_id,
        position=np.array(position, dtype=float),
        linear_velocity=np.array(velocity, dtype=float),
        angular_velocity=float(omega),
        goal=np.array(goal, dtype=float),
        preferred_speed=preferred_speed,
    )


def make_world(
    robot_pos=(0.0, 0.0),
    robot_heading=0.0,
    goal=(5.0, 0.0),
    pedestrians=(),
    obstacles=(),
    params=None,
    dt=0.1,
):
    return WorldState(
        robot=RobotState(position=np.array(robot_pos, dtype=float), heading=robot_heading, speed=0.0),
        robot_goal=np.array(goal, dtype=float),
        pedestrians=tuple(pedestrians),
        obstacles=tuple(obstacles),
        clock=SimClock(step_index=0, dt=dt),
        params=params or SocialForceParams(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
