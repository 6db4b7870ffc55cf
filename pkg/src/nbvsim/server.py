"""Newline-delimited JSON wire protocol for driving episodes remotely.

One episode per connection at a time; strictly sequential request-response.
Message schemas (field names normative):

  -> {"type": "hello", "want_frames": bool}
  <- {"type": "hello", "version": "1", "grid_dims": [nx, ny, nz],
      "action_box": [[x0, y0, z0], [x1, y1, z1]]}
  -> {"type": "reset", "scene": "id"?, "seed": int?}
  <- {"type": "reset_ok", "obs": {...}}
  -> {"type": "step", "action": [x, y, z, pitch, yaw]}
  <- {"type": "step_result", "obs": {...}, "reward": f, "terminated": bool,
      "reason": str|null, "info": {"cr": f, "collision": bool}}
  -> {"type": "close"}   <- {"type": "close"}
  any violation <- {"type": "error", "code": "...", "message": "..."}

The observation payload carries the pose history, the flattened grid
(x-fastest) as log-odds and as state byte codes (0/1/2 = unknown/free/
occupied), the coverage percentage, the step index, and (when requested in
hello) the base64-encoded 8-bit grayscale frame stack.

Transports: TCP (default bind from the NBV_BIND env var) and stdio for
subprocess embedding. Unknown fields are ignored; unknown types get an
error reply; malformed input never crashes the server.
"""

import base64
import json
import math
import os
import socket
import socketserver
import sys
import threading

import numpy as np

from .env import EnvConfig, EpisodeStatus, Scene, observation, reset, step
from .geometry import Pose5D
from .mapping import GridConfig, OccupancyGrid, classify_values

PROTOCOL_VERSION = "1"
DEFAULT_BIND = "127.0.0.1:7723"
BIND_ENV_VAR = "NBV_BIND"


def downsample_grid(grid: OccupancyGrid, target_dims) -> dict:
    """Max-pooled observation fields; identity when target equals the grid.

    Log-odds are max-pooled per block and states reclassified from the
    pooled values. Target dims must divide the source dims.
    """
    cfg = grid.config
    target = tuple(int(d) for d in target_dims)
    for src, dst in zip(cfg.dims, target):
        if dst < 1 or src % dst != 0:
            raise ValueError(f"target dims {target} do not divide {cfg.dims}")
    fx, fy, fz = (s // d for s, d in zip(cfg.dims, target))
    pooled = grid.log_odds.reshape(
        target[0], fx, target[1], fy, target[2], fz).max(axis=(1, 3, 5))
    states = classify_values(pooled, cfg)
    return {
        "grid_dims": list(target),
        "grid_logodds": pooled.ravel(order="F").tolist(),
        "grid_states": states.ravel(order="F").astype(int).tolist(),
    }


def _encode_frames(state) -> list[dict]:
    out = []
    for frame in state.frames.frames:
        q = np.clip(np.rint(frame.intensities * 255.0), 0, 255).astype(np.uint8)
        out.append({
            "width": frame.width,
            "height": frame.height,
            "data": base64.b64encode(q.tobytes()).decode("ascii"),
        })
    return out


def observation_payload(state, want_frames: bool = False) -> dict:
    obs = {
        "pose_history": [list(p.as_tuple()) for p in state.poses],
        "grid_dims": list(state.grid.config.dims),
        "grid_logodds": state.grid.flat().tolist(),
        "grid_states": classify_values(
            state.grid.log_odds, state.grid.config
        ).ravel(order="F").astype(int).tolist(),
        "coverage": state.current_coverage,
        "step": state.step_count,
    }
    if want_frames:
        obs["frames"] = _encode_frames(state)
    return obs


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


class ProtocolSession:
    """Per-connection protocol state machine: one line in, one reply out."""

    def __init__(self, config: EnvConfig, scenes: list[Scene]):
        if not scenes:
            raise ValueError("protocol server needs at least one scene")
        self.config = config
        self.scenes = {s.scene_id: s for s in scenes}
        self.scene_order = [s.scene_id for s in scenes]
        self.next_scene = 0
        self.state = None
        self.want_frames = False
        self.closed = False

    def handle_line(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            return _error("bad_json", str(exc))
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            return _error("bad_json", "message must be an object with a type")
        handler = getattr(self, f"_on_{msg['type']}", None)
        if handler is None:
            return _error("unknown_type", f"unknown message type {msg['type']!r}")
        try:
            return handler(msg)
        except Exception as exc:  # protocol must never crash the server
            return _error("internal", f"{type(exc).__name__}: {exc}")

    def _on_hello(self, msg) -> dict:
        self.want_frames = bool(msg.get("want_frames", False))
        box = self.config.action_box
        return {
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "grid_dims": list(self.config.grid.dims),
            "action_box": [list(box.lo), list(box.hi)],
        }

    def _on_reset(self, msg) -> dict:
        scene_id = msg.get("scene")
        if scene_id is None:
            scene_id = self.scene_order[self.next_scene % len(self.scene_order)]
            self.next_scene += 1
        elif scene_id not in self.scenes:
            return _error("unknown_scene", f"no scene {scene_id!r}")
        seed = msg.get("seed", 0)
        if not isinstance(seed, int):
            return _error("bad_seed", "seed must be an integer")
        self.state = reset(self.config, self.scenes[scene_id], seed=seed)
        return {"type": "reset_ok",
                "obs": observation_payload(self.state, self.want_frames)}

    def _on_step(self, msg) -> dict:
        if self.state is None:
            return _error("no_episode", "step before reset")
        action = msg.get("action")
        if (not isinstance(action, (list, tuple)) or len(action) != 5
                or not all(isinstance(v, (int, float)) for v in action)):
            return _error("bad_action", "action must be [x, y, z, pitch, yaw]")
        if not all(math.isfinite(float(v)) for v in action):
            return _error("bad_action", "action components must be finite")
        if self.state.status is not EpisodeStatus.RUNNING:
            return _error("episode_done", "episode already terminated; reset")
        pitch = min(math.pi / 2, max(-math.pi / 2, float(action[3])))
        pose = Pose5D(float(action[0]), float(action[1]), float(action[2]),
                      pitch, float(action[4]))
        outcome = step(self.state, pose)
        return {
            "type": "step_result",
            "obs": observation_payload(self.state, self.want_frames),
            "reward": outcome.reward,
            "terminated": outcome.terminated,
            "reason": outcome.reason,
            "info": {"cr": outcome.info["cr_after"],
                     "collision": outcome.info["collision"]},
        }

    def _on_close(self, msg) -> dict:
        self.closed = True
        return {"type": "close"}


def parse_bind(bind: str | None) -> tuple[str, int]:
    if bind is None:
        bind = os.environ.get(BIND_ENV_VAR, DEFAULT_BIND)
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    return host, int(port)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = ProtocolSession(self.server.env_config, self.server.scenes)
        while not session.closed:
            try:
                raw = self.rfile.readline()
            except (ConnectionError, OSError):
                break
            if not raw:
                break
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                line = raw.decode("utf-8", errors="replace")
            reply = session.handle_line(line)
            try:
                self.wfile.write((json.dumps(reply) + "\n").encode("utf-8"))
            except (ConnectionError, OSError):
                break
        if session.state is not None and \
                session.state.status is EpisodeStatus.RUNNING:
            self.server.log(f"episode aborted (client gone) at step "
                            f"{session.state.step_count}")
        elif session.state is not None:
            self.server.log(
                f"episode finished: {session.state.status.value} at step "
                f"{session.state.step_count}, CR "
                f"{session.state.current_coverage:.2f}%")


class ProtocolServer(socketserver.ThreadingTCPServer):
    """Each connection gets an independent session (and episode)."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, config: EnvConfig, scenes: list[Scene],
                 bind: str | None = None, quiet: bool = False):
        host, port = parse_bind(bind)
        self.env_config = config
        self.scenes = scenes
        self.quiet = quiet
        super().__init__((host, port), _Handler)

    def log(self, message: str) -> None:
        if not self.quiet:
            print(f"[nbvsim-serve] {message}", file=sys.stderr, flush=True)


def serve(config: EnvConfig, scenes: list[Scene], bind: str | None = None,
          quiet: bool = False) -> None:
    """Run the TCP protocol server until interrupted."""
    with ProtocolServer(config, scenes, bind, quiet) as server:
        server.log(f"listening on {server.server_address[0]}:"
                   f"{server.server_address[1]} with {len(scenes)} scene(s)")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            server.log("interrupt: shutting down")


def serve_stdio(config: EnvConfig, scenes: list[Scene]) -> None:
    """Serve one session over stdin/stdout (for subprocess embedding)."""
    session = ProtocolSession(config, scenes)
    for line in sys.stdin:
        reply = session.handle_line(line)
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()
        if session.closed:
            break


class ProtocolClient:
    """Minimal blocking client for tests and scripted sessions."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("r", encoding="utf-8")

    def request(self, msg: dict) -> dict:
        self.sock.sendall((json.dumps(msg) + "\n").encode("utf-8"))
        line = self.reader.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def send_raw(self, data: bytes) -> dict:
        self.sock.sendall(data)
        line = self.reader.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def close(self):
        try:
            self.request({"type": "close"})
        except (ConnectionError, OSError):
            pass
        self.sock.close()
