"""Teleoperation bridge: drive the simulated robot over a message protocol.

The protocol is JSON messages with a ``kind``, a strictly increasing ``seq``
per direction, and a kind-specific payload:

  client -> server
    command        {"kind": "command", "seq": n, "velocity": [vx, vy]}
    start_episode  {"kind": "start_episode", "seq": n, "seed": optional}
    end_episode    {"kind": "end_episode", "seq": n}
  server -> client
    state_update   full world snapshot each tick (see _state_payload)
    episode_saved  acknowledgment with the stored demo's id and SVCR
    error          {"message": ...} for malformed or out-of-order input

``TeleopSession`` is synchronous and wall-clock free: ``tick()`` advances
exactly one simulation step, so a recorded (tick, command) log replays to a
byte-identical demonstration. ``create_app``/``serve`` wrap it in a real-time
WebSocket loop at the simulation tick rate.
"""

# No `from __future__ import annotations` here: FastAPI must evaluate the
# WebSocket annotation inside create_app, where fastapi is imported lazily.
import asyncio
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .archive import DemoArchive
from .features import build_feature_map
from .reward_net import RewardModel, forward
from .runtime import EpisodeRecorder, RuntimeConfig, _active_waypoint_index, _social_radii, waypoints_to
from .sim import Scenario, SocialForceParams, make_scenario, step_world

logger = logging.getLogger(__name__)

STALE_SECONDS = 0.5


class TeleopSession:
    """One driver, one world; strictly sequential ticks."""

    def __init__(
        self,
        scenario: Scenario,
        config: RuntimeConfig | None = None,
        params: SocialForceParams | None = None,
        model: RewardModel | None = None,
        archive_path: str | Path | None = None,
        session_id: str = "teleop",
    ):
        self.scenario = scenario
        self.config = config or RuntimeConfig()
        self.params = params or SocialForceParams()
        self.model = model
        self.session_id = session_id
        self.archive_path = Path(archive_path) if archive_path else None
        if self.archive_path and self.archive_path.exists():
            self.archive = DemoArchive.load(self.archive_path)
        else:
            self.archive = DemoArchive(scenario=scenario, config=self.config)
        self.world = make_scenario(scenario, self.params)
        self.archive.dt = self.world.clock.dt
        self.recording = False
        self.recorder: EpisodeRecorder | None = None
        self.command = np.zeros(2)
        self.command_tick: int | None = None
        self.tick_index = 0
        self.seq_out = 0
        self.last_seq_in = 0
        self.episode_count = len(self.archive.demos)
        self._waypoints = waypoints_to(
            self.world.robot.position, self.world.robot_goal, self.config.waypoint_spacing
        )
        self._wp_index = 0

    def _next_seq(self) -> int:
        self.seq_out += 1
        return self.seq_out

    def _reply(self, kind: str, payload: dict) -> dict:
        return {"kind": kind, "seq": self._next_seq(), "payload": payload}

    def _error(self, message: str) -> dict:
        return self._reply("error", {"message": message})

    def handle_message(self, message: dict) -> list[dict]:
        """Apply one client message; returns replies (never raises)."""
        try:
            kind = message.get("kind")
            seq = message.get("seq")
            if not isinstance(seq, int) or seq <= self.last_seq_in:
                return [self._error(f"seq must be an integer > {self.last_seq_in}, got {seq!r}")]
            self.last_seq_in = seq
            if kind == "command":
                velocity = np.asarray(message["velocity"], dtype=float)
                if velocity.shape != (2,) or not np.all(np.isfinite(velocity)):
                    return [self._error("command velocity must be a finite 2-vector")]
                self.command = velocity
                self.command_tick = self.tick_index
                return []
            if kind == "start_episode":
                return [self._start_episode(message.get("seed"))]
            if kind == "end_episode":
                return [self._end_episode()]
            return [self._error(f"unknown message kind {kind!r}")]
        except Exception as exc:  # malformed payloads keep the session alive
            return [self._error(f"malformed {message.get('kind', '?')} message: {exc}")]

    def _start_episode(self, seed: int | None) -> dict:
        scenario = self.scenario if seed is None else replace(self.scenario, seed=int(seed))
        self.scenario = scenario
        self.world = make_scenario(scenario, self.params)
        self.recorder = EpisodeRecorder(self.config)
        self.recording = True
        self.command = np.zeros(2)
        self.command_tick = None
        self._waypoints = waypoints_to(
            self.world.robot.position, self.world.robot_goal, self.config.waypoint_spacing
        )
        self._wp_index = 0
        return self._reply(
            "state_update", self._state_payload()
        )

    def _end_episode(self, complete: bool = True) -> dict:
        if not self.recording or self.recorder is None:
            return self._error("no episode in progress")
        self.recording = False
        self.episode_count += 1
        demo_id = f"{self.session_id}-{self.episode_count:04d}"
        demo = self.recorder.finish(demo_id, self.world.clock.dt, complete=complete)
        self.recorder = None
        self.archive.append(demo)
        if self.archive_path:
            self.archive.save(self.archive_path)
        return self._reply(
            "episode_saved",
            {
                "demo_id": demo_id,
                "n_s": demo.n_s,
                "epsilon_s": demo.epsilon_s,
                "steps": len(demo.robot_states),
                "path_length": demo.trajectory_length,
                "complete": complete,
            },
        )

    def handle_disconnect(self) -> None:
        """Mid-episode disconnects keep the recording but mark it incomplete."""
        if self.recording:
            logger.warning("client disconnected mid-episode; marking demo incomplete")
            self._end_episode(complete=False)

    def current_command(self) -> np.ndarray:
        """Latest command, zeroed once stale (older than 0.5 s of ticks)."""
        if self.command_tick is None:
            return np.zeros(2)
        stale_ticks = int(round(STALE_SECONDS / self.world.clock.dt))
        if self.tick_index - self.command_tick > stale_ticks:
            return np.zeros(2)
        return self.command

    def tick(self) -> dict:
        """Advance one simulation step and return the state_update message."""
        if self.recording and self.recorder is not None:
            self._wp_index = _active_waypoint_index(
                self.world.robot.position, self._waypoints, self._wp_index, self.config.waypoint_reach
            )
            self.recorder.observe(self.world, self._waypoints[self._wp_index])
        self.world = step_world(self.world, self.current_command())
        self.tick_index += 1
        return self._reply("state_update", self._state_payload())

    def _state_payload(self) -> dict:
        world = self.world
        radii = _social_radii(world, self.config)
        window_record = self.recorder.windows[-1] if self.recorder and self.recorder.windows else None
        reward_map = None
        window_outline = None
        if window_record is not None:
            window_outline = window_record.window.corners_world().tolist()
            if self.model is not None:
                feature_map = build_feature_map(
                    world,
                    window_record.window,
                    np.array(window_record.waypoint),
                    self.config.feature,
                )
                reward_map = {
                    "m_side": window_record.window.m_side,
                    "values": forward(self.model, feature_map).tolist(),
                }
        return {
            "tick": self.tick_index,
            "dt": world.clock.dt,
            "recording": self.recording,
            "robot": world.robot.to_dict(),
            "goal": world.robot_goal.tolist(),
            "waypoint": [float(v) for v in self._waypoints[self._wp_index]],
            "pedestrians": [
                {**p.to_dict(), "social_radius": r} for p, r in zip(world.pedestrians, radii)
            ],
            "obstacles": [list(rect) for rect in world.obstacles],
            "window": window_outline,
            "reward_map": reward_map,
        }


def create_app(session: TeleopSession):
    """FastAPI app exposing the session at /ws (one client at a time)."""
    from fastapi import FastAPI, WebSocket, WebSocketDisconnect

    app = FastAPI(title="crowdirl teleop bridge")
    state = {"busy": False}

    @app.get("/healthz")
    def healthz() -> dict:
        return {"ok": True, "tick": session.tick_index}

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket) -> None:
        await websocket.accept()
        if state["busy"]:
            await websocket.send_text(
                json.dumps({"kind": "error", "seq": 0, "payload": {"message": "session busy"}})
            )
            await websocket.close()
            return
        state["busy"] = True
        dt = session.world.clock.dt

        async def pump_ticks() -> None:
            while True:
                update = session.tick()
                await websocket.send_text(json.dumps(update))
                await asyncio.sleep(dt)

        sender = asyncio.create_task(pump_ticks())
        try:
            while True:
                raw = await websocket.receive_text()
                try:
                    message = json.loads(raw)
                except json.JSONDecodeError as exc:
                    replies = [session._error(f"invalid JSON: {exc}")]
                else:
                    replies = session.handle_message(message)
                for reply in replies:
                    await websocket.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            session.handle_disconnect()
        finally:
            sender.cancel()
            state["busy"] = False

    return app


def serve(
    scenario: Scenario,
    bind: str = "127.0.0.1",
    port: int = 8765,
    archive_path: str | Path | None = None,
    config: RuntimeConfig | None = None,
    model: RewardModel | None = None,
) -> None:
    """Run the bridge until interrupted."""
    import uvicorn

    session = TeleopSession(scenario, config=config, model=model, archive_path=archive_path)
    uvicorn.run(create_app(session), host=bind, port=port, log_level="warning")
