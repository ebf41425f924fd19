import math

import numpy as np
import pytest

from crowdirl.geometry import GridWindow, point_segment_distance
from crowdirl.sim import (
    MIN_SPACING,
    PedestrianState,
    Scenario,
    SimClock,
    SocialForceParams,
    WorldState,
    make_scenario,
    pedestrians_in_window,
    social_forces,
    step_world,
)

from conftest import make_ped, make_world


def world_fingerprint(world: WorldState) -> tuple:
    """Exact value snapshot for bit-identity comparisons."""
    return (
        world.robot.position.tobytes(),
        world.robot.heading,
        world.robot.speed,
        world.robot_goal.tobytes(),
        tuple(
            (p.id, p.position.tobytes(), p.linear_velocity.tobytes(),
             p.angular_velocity, p.goal.tobytes(), p.preferred_speed)
            for p in world.pedestrians
        ),
        world.obstacles,
        world.clock.step_index,
    )


class TestScenarioType:
    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(kind="hallway")
        with pytest.raises(ValueError):
            Scenario(pedestrian_count=-1)
        with pytest.raises(ValueError):
            Scenario(circle_radius=0.0)
        with pytest.raises(ValueError):
            Scenario(seed=-1)
        with pytest.raises(ValueError):
            Scenario(seed=2**64)

    def test_dict_round_trip(self):
        sc = Scenario(kind="corridor", pedestrian_count=3, circle_radius=5.0,
                      static_obstacles=[(0.0, 0.0, 1.0, 1.0)], seed=99)
        clone = Scenario.from_dict(sc.to_dict())
        assert clone == sc

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ValueError):
            Scenario.from_dict({"kind": "circle_crossing", "velocity": 1.0})


class TestMakeScenario:
    def test_empty_crowd_goal_at_8m(self):
        world = make_scenario(Scenario(pedestrian_count=0, circle_radius=4.0, seed=3))
        assert world.pedestrians == ()
        assert np.linalg.norm(world.robot.position) == pytest.approx(4.0)
        assert np.linalg.norm(world.robot_goal - world.robot.position) == pytest.approx(8.0)
        # robot faces its goal
        to_goal = world.robot_goal - world.robot.position
        assert world.robot.heading == pytest.approx(math.atan2(to_goal[1], to_goal[0]))

    def test_seed_determinism_bit_identical(self):
        sc = Scenario(pedestrian_count=4, circle_radius=4.0, seed=7)
        assert world_fingerprint(make_scenario(sc)) == world_fingerprint(make_scenario(sc))

    def test_distinct_seeds_differ(self):
        a = make_scenario(Scenario(pedestrian_count=4, seed=1))
        b = make_scenario(Scenario(pedestrian_count=4, seed=2))
        assert world_fingerprint(a) != world_fingerprint(b)

    def test_goal_chords_pass_near_center(self):
        center = np.zeros(2)
        for seed in range(30):
            world = make_scenario(Scenario(pedestrian_count=6, circle_radius=4.0, seed=seed))
            for ped in world.pedestrians:
                d = point_segment_distance(center, ped.position, ped.goal)
                assert d <= 1.4, f"seed {seed} ped {ped.id} chord misses center by {d:.2f} m"
            assert np.allclose(world.robot_goal, -world.robot.position)

    def test_placement_spacing(self):
        for seed in range(10):
            world = make_scenario(Scenario(pedestrian_count=6, circle_radius=4.0, seed=seed))
            everyone = [world.robot.position] + [p.position for p in world.pedestrians]
            for i in range(len(everyone)):
                for j in range(i + 1, len(everyone)):
                    assert np.linalg.norm(everyone[i] - everyone[j]) >= MIN_SPACING

    def test_overcrowded_circle_rejected(self):
        with pytest.raises(ValueError):
            make_scenario(Scenario(pedestrian_count=50, circle_radius=4.0, seed=0))

    def test_pedestrians_start_at_rest_on_circle(self):
        world = make_scenario(Scenario(pedestrian_count=5, circle_radius=4.0, seed=11))
        assert len(world.pedestrians) == 5
        for ped in world.pedestrians:
            assert np.linalg.norm(ped.position) == pytest.approx(4.0)
            assert np.all(ped.linear_velocity == 0.0)
            assert 0.9 <= ped.preferred_speed <= 1.5

    def test_corridor_layout(self):
        world = make_scenario(Scenario(kind="corridor", pedestrian_count=3, circle_radius=4.0, seed=5))
        assert len(world.obstacles) == 2  # two walls
        assert world.robot.position[0] < world.robot_goal[0]
        for ped in world.pedestrians:
            assert -2.0 < ped.position[1] < 2.0

    def test_random_goals_layout(self):
        world = make_scenario(Scenario(kind="random_goals", pedestrian_count=4, circle_radius=4.0, seed=5))
        assert len(world.pedestrians) == 4
        for ped in world.pedestrians:
            assert np.all(np.abs(ped.position) <= 4.0)


class TestSocialForces:
    def test_empty_world(self):
        world = make_world()
        assert social_forces(world).shape == (0, 2)

    def test_equilibrium_at_goal(self):
        ped = make_ped(position=(1.0, 2.0), goal=(1.0, 2.0))
        world = make_world(robot_pos=(100.0, 100.0), goal=(100.0, 100.0), pedestrians=[ped])
        assert np.allclose(social_forces(world), 0.0)
        for _ in range(100):
            world = step_world(world, np.zeros(2))
        drift = np.linalg.norm(world.pedestrians[0].position - np.array([1.0, 2.0]))
        assert drift <= 0.05

    def test_head_on_repulsion_signs(self):
        p = SocialForceParams()
        # velocities equal the desired velocity, so goal attraction vanishes
        # and only pairwise repulsion remains
        a = make_ped(ped_id=0, position=(-0.5, 0.0), velocity=(p.desired_speed, 0.0), goal=(5.0, 0.0))
        b = make_ped(ped_id=1, position=(0.5, 0.0), velocity=(-p.desired_speed, 0.0), goal=(-5.0, 0.0))
        world = make_world(robot_pos=(100.0, 100.0), goal=(100.0, 100.0), pedestrians=[a, b], params=p)
        f = social_forces(world)
        assert f[0][0] < 0 < f[1][0]
        assert np.allclose(f[0], -f[1])

    def test_robot_repulsion_flag(self):
        ped = make_ped(position=(0.6, 0.0), velocity=(1.2, 0.0), goal=(5.0, 0.0))
        near = make_world(robot_pos=(0.0, 0.0), pedestrians=[ped])
        f_on = social_forces(near)
        off = SocialForceParams(robot_repulsion=False)
        f_off = social_forces(make_world(robot_pos=(0.0, 0.0), pedestrians=[ped], params=off))
        assert f_on[0][0] > f_off[0][0]  # robot pushes the pedestrian away (+x)

    def test_obstacle_repulsion_points_away(self):
        ped = make_ped(position=(0.0, 0.5), velocity=(1.2, 0.0), goal=(5.0, 0.5))
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped],
                           obstacles=[(-1.0, -1.0, 1.0, 0.3)])
        f = social_forces(world)
        assert f[0][1] > 0  # pushed up, away from the slab below

    def test_preferred_speed_zero_inherits_default(self):
        default = make_ped(position=(0.0, 0.0), goal=(10.0, 0.0), preferred_speed=0.0)
        custom = make_ped(position=(0.0, 0.0), goal=(10.0, 0.0), preferred_speed=0.7)
        w_default = make_world(robot_pos=(100.0, 100.0), pedestrians=[default])
        w_custom = make_world(robot_pos=(100.0, 100.0), pedestrians=[custom])
        f_default = social_forces(w_default)[0][0]
        f_custom = social_forces(w_custom)[0][0]
        assert f_default == pytest.approx(1.2 / 0.5)
        assert f_custom == pytest.approx(0.7 / 0.5)


class TestStepWorld:
    def test_dt_validation(self):
        world = make_world()
        with pytest.raises(ValueError):
            step_world(world, np.zeros(2), dt=0.0)
        with pytest.raises(ValueError):
            step_world(world, np.zeros(2), dt=-0.1)
        with pytest.raises(ValueError):
            SimClock(step_index=0, dt=0.0)

    def test_clock_advances(self):
        world = make_world()
        stepped = step_world(world, np.zeros(2))
        assert stepped.clock.step_index == 1
        assert stepped.clock.dt == world.clock.dt

    def test_robot_kinematics_and_clamp(self):
        world = make_world(robot_pos=(0.0, 0.0))
        stepped = step_world(world, np.array([10.0, 0.0]))
        # command clamped to max_robot_speed = 1 m/s, so 0.1 m per 0.1 s tick
        assert np.allclose(stepped.robot.position, [0.1, 0.0])
        assert stepped.robot.speed == pytest.approx(1.0)
        assert stepped.robot.heading == pytest.approx(0.0)

    def test_zero_command_keeps_heading(self):
        world = make_world(robot_heading=1.1)
        stepped = step_world(world, np.zeros(2))
        assert stepped.robot.heading == 1.1
        assert stepped.robot.speed == 0.0
        assert np.allclose(stepped.robot.position, world.robot.position)

    def test_single_ped_reaches_goal_vs_ode_oracle(self):
        """Coarse 0.1 s stepping agrees with a fine-step integration of the
        same goal-attraction ODE to 0.1 m at the endpoint, and lands within
        0.3 m of the goal after 30 steps from 2 m out."""
        ped = make_ped(position=(-2.0, 0.0), goal=(0.0, 0.0))
        world = make_world(robot_pos=(100.0, 100.0), goal=(100.0, 100.0), pedestrians=[ped])
        for _ in range(30):
            world = step_world(world, np.zeros(2))
        coarse = world.pedestrians[0].position

        p = world.params
        pos, vel, dt = np.array([-2.0, 0.0]), np.zeros(2), 0.001
        for _ in range(3000):
            dist = float(np.linalg.norm(pos))
            direction = -pos / dist if dist > 1e-9 else np.zeros(2)
            speed_cmd = p.desired_speed * min(dist / p.arrival_radius, 1.0)
            vel = vel + (direction * speed_cmd - vel) / p.relaxation_time * dt
            speed = float(np.linalg.norm(vel))
            if speed > p.max_speed:
                vel = vel * (p.max_speed / speed)
            pos = pos + vel * dt

        assert np.linalg.norm(coarse) <= 0.3
        assert np.linalg.norm(coarse - pos) <= 0.1

    def test_pedestrian_speed_clamped(self):
        ped = make_ped(position=(0.0, 0.0), velocity=(1.7, 0.0), goal=(50.0, 0.0))
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped])
        for _ in range(50):
            world = step_world(world, np.zeros(2))
            assert np.linalg.norm(world.pedestrians[0].linear_velocity) <= world.params.max_speed + 1e-12

    def test_omega_is_heading_change_over_dt(self):
        ped = make_ped(position=(0.0, 0.0), velocity=(1.0, 0.0), goal=(0.0, 50.0))
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped])
        stepped = step_world(world, np.zeros(2))
        v0 = world.pedestrians[0].linear_velocity
        v1 = stepped.pedestrians[0].linear_velocity
        expected = (math.atan2(v1[1], v1[0]) - math.atan2(v0[1], v0[0])) / 0.1
        assert stepped.pedestrians[0].angular_velocity == pytest.approx(expected)
        assert stepped.pedestrians[0].angular_velocity > 0

    def test_omega_zero_below_speed_floor(self):
        ped = make_ped(position=(0.0, 0.0), velocity=(0.01, 0.0), goal=(0.0, 50.0))
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped])
        stepped = step_world(world, np.zeros(2))
        assert stepped.pedestrians[0].angular_velocity == 0.0

    def test_goal_cycling_flips_goal_only_after_slowing(self):
        ped = make_ped(position=(0.9, 0.0), velocity=(1.0, 0.0), goal=(1.2, 0.0))
        cycling = SocialForceParams(goal_cycling=True)
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped], params=cycling)
        world = step_world(world, np.zeros(2))
        # inside the arrival radius but still walking: not yet
        assert np.allclose(world.pedestrians[0].goal, [1.2, 0.0])
        flip_step = None
        for k in range(80):
            world = step_world(world, np.zeros(2))
            if np.allclose(world.pedestrians[0].goal, [-1.2, 0.0]):
                flip_step = k
                break
            # until the flip the taper must keep it aimed at the old goal
            assert np.allclose(world.pedestrians[0].goal, [1.2, 0.0])
        assert flip_step is not None

    def test_goal_cycling_default_off(self):
        assert SocialForceParams().goal_cycling is False
        ped = make_ped(position=(0.9, 0.0), velocity=(1.0, 0.0), goal=(1.2, 0.0))
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[ped])
        stepped = step_world(world, np.zeros(2))
        assert np.allclose(stepped.pedestrians[0].goal, [1.2, 0.0])

    def test_preferred_speed_sets_cruise(self):
        slow = make_ped(position=(0.0, 0.0), goal=(50.0, 0.0), preferred_speed=0.6)
        world = make_world(robot_pos=(100.0, 100.0), pedestrians=[slow])
        for _ in range(40):
            world = step_world(world, np.zeros(2))
        assert np.linalg.norm(world.pedestrians[0].linear_velocity) == pytest.approx(0.6, abs=0.05)


class TestRolloutInvariants:
    def test_command_sequence_determinism(self):
        sc = Scenario(pedestrian_count=4, circle_radius=4.0, seed=13)
        rng = np.random.default_rng(0)
        commands = rng.uniform(-1, 1, size=(60, 2))

        def rollout():
            world = make_scenario(sc)
            states = [world_fingerprint(world)]
            for cmd in commands:
                world = step_world(world, cmd)
                states.append(world_fingerprint(world))
            return states

        assert rollout() == rollout()

    def test_energy_bounded_no_robot_influence(self):
        params = SocialForceParams(robot_repulsion=False)
        world = make_scenario(Scenario(pedestrian_count=6, circle_radius=4.0, seed=2), params=params)
        cap = 6 * 0.5 * params.max_speed**2
        for _ in range(300):
            world = step_world(world, np.zeros(2))
            energy = sum(0.5 * float(v @ v) for v in (p.linear_velocity for p in world.pedestrians))
            assert energy <= cap + 1e-12

    def test_no_exact_overlap_1000_steps(self):
        params = SocialForceParams(goal_cycling=True)
        world = make_scenario(Scenario(pedestrian_count=5, circle_radius=4.0, seed=4), params=params)
        for _ in range(1000):
            world = step_world(world, np.zeros(2))
            pos = np.stack([p.position for p in world.pedestrians])
            assert np.all(np.isfinite(pos))
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.linalg.norm(diff, axis=-1)
            np.fill_diagonal(dist, np.inf)
            assert dist.min() > 0.0


class TestPedestriansInWindow:
    def test_empty_world(self):
        window = GridWindow(origin=(0.0, 0.0), orientation=0.0)
        assert pedestrians_in_window(make_world(), window) == []

    def test_boundary_convention(self):
        window = GridWindow(origin=(0.0, 0.0), orientation=0.0, m_side=3, resolution=1.0)
        on_lower = make_ped(ped_id=0, position=(0.0, 0.0))
        on_upper = make_ped(ped_id=1, position=(3.0, 1.0))
        inside = make_ped(ped_id=2, position=(1.5, 1.5))
        world = make_world(pedestrians=[on_lower, on_upper, inside])
        ids = [p.id for p in pedestrians_in_window(world, window)]
        assert ids == [0, 2]

    def test_matches_containment_oracle(self, rng):
        theta = 0.6
        window = GridWindow(origin=(1.0, -1.0), orientation=theta, m_side=3, resolution=1.0)
        peds = [make_ped(ped_id=i, position=tuple(rng.uniform(-3, 5, size=2))) for i in range(10)]
        world = make_world(pedestrians=peds)
        got = {p.id for p in pedestrians_in_window(world, window)}
        # independent oracle: rotate into the window frame by hand
        c, s = math.cos(-theta), math.sin(-theta)
        expected = set()
        for p in peds:
            dx, dy = p.position[0] - 1.0, p.position[1] + 1.0
            lx, ly = c * dx - s * dy, s * dx + c * dy
            if 0.0 <= lx < 3.0 and 0.0 <= ly < 3.0:
                expected.add(p.id)
        assert got == expected


class TestSerialization:
    def test_pedestrian_round_trip(self):
        ped = make_ped(ped_id=3, position=(1.5, -2.5), velocity=(0.3, 0.4),
                       omega=-0.7, goal=(4.0, 4.0), preferred_speed=1.1)
        clone = PedestrianState.from_dict(ped.to_dict())
        assert clone.id == 3
        assert np.array_equal(clone.position, ped.position)
        assert np.array_equal(clone.linear_velocity, ped.linear_velocity)
        assert clone.angular_velocity == ped.angular_velocity
        assert np.array_equal(clone.goal, ped.goal)
        assert clone.preferred_speed == 1.1

    def test_pedestrian_from_dict_backcompat(self):
        data = make_ped(ped_id=1).to_dict()
        data.pop("preferred_speed")
        assert PedestrianState.from_dict(data).preferred_speed == 0.0

    def test_params_round_trip(self):
        p = SocialForceParams(robot_repulsion=False, goal_cycling=True, desired_speed=0.9)
        assert SocialForceParams.from_dict(p.to_dict()) == p
