"""Skeleton frame sources: scripted synthetic player, replay, network, virtual.

Every source produces frames on the nominal 30 Hz timeline through
`next_frame()`, returning None at end of stream. Sources are the only
stand-in for the physical sensor: a real sensor bridge only has to send
the recorder's frame line format over a socket.
"""

from __future__ import annotations

import json
import random
import socket
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .calibration import Cell, GridFrame, layout_cells
from .engine import TICK_HZ, tick_to_ms
from .skeleton import ALL_JOINTS, JointId, SkeletonFrame, Vec3


class MalformedFrame(ValueError):
    pass


class InvalidCell(ValueError):
    pass


# Child-scale standing model: (x, y, z) offsets from the floor point.
# Hip/knee/ankle share each side's x offset so an unperturbed leg is
# perfectly straight (interior angle exactly 180 degrees).
_BODY = {
    JointId.SPINE_BASE: (0.0, 0.90, 0.0),
    JointId.SPINE_MID: (0.0, 1.15, 0.0),
    JointId.SPINE_SHOULDER: (0.0, 1.38, 0.0),
    JointId.NECK: (0.0, 1.45, 0.0),
    JointId.HEAD: (0.0, 1.58, 0.0),
    JointId.SHOULDER_L: (-0.16, 1.40, 0.0),
    JointId.SHOULDER_R: (0.16, 1.40, 0.0),
    JointId.ELBOW_L: (-0.21, 1.14, 0.0),
    JointId.ELBOW_R: (0.21, 1.14, 0.0),
    JointId.WRIST_L: (-0.23, 0.92, 0.0),
    JointId.WRIST_R: (0.23, 0.92, 0.0),
    JointId.HAND_L: (-0.24, 0.84, 0.0),
    JointId.HAND_R: (0.24, 0.84, 0.0),
    JointId.HAND_TIP_L: (-0.24, 0.78, 0.0),
    JointId.HAND_TIP_R: (0.24, 0.78, 0.0),
    JointId.THUMB_L: (-0.20, 0.86, 0.02),
    JointId.THUMB_R: (0.20, 0.86, 0.02),
    JointId.HIP_L: (-0.10, 0.84, 0.0),
    JointId.HIP_R: (0.10, 0.84, 0.0),
    JointId.KNEE_L: (-0.10, 0.46, 0.0),
    JointId.KNEE_R: (0.10, 0.46, 0.0),
    JointId.ANKLE_L: (-0.10, 0.08, 0.0),
    JointId.ANKLE_R: (0.10, 0.08, 0.0),
    JointId.FOOT_L: (-0.10, 0.02, 0.12),
    JointId.FOOT_R: (0.10, 0.02, 0.12),
}


def synth_skeleton(
    floor_x: float,
    floor_z: float,
    t_ms: int,
    posture: Optional[dict[JointId, Vec3]] = None,
) -> SkeletonFrame:
    """Upright synthetic skeleton standing at (floor_x, 0, floor_z).

    `posture` adds per-joint offsets, e.g. a lowered knee or raised hand,
    so scripted sessions can reproduce characteristic posture defects.
    """
    joints = {}
    for j, (ox, oy, oz) in _BODY.items():
        p = Vec3(floor_x + ox, oy, floor_z + oz)
        if posture and j in posture:
            p = p + posture[j]
        joints[j] = p
    return SkeletonFrame(t_ms=t_ms, joints=joints)


@dataclass(frozen=True)
class ScriptMove:
    at_s: float
    cell: Cell
    transit_s: float
    noise_std_m: float = 0.0

    def __post_init__(self):
        if self.transit_s < 0:
            raise ValueError(f"transit_s must be >= 0, got {self.transit_s}")
        if self.noise_std_m < 0:
            raise ValueError(f"noise_std_m must be >= 0, got {self.noise_std_m}")


@dataclass(frozen=True)
class MovementScript:
    """Where the synthetic player stands over time.

    The player starts on `start_cell`; each move walks linearly to the
    target cell center over its transit time. A move's noise level stays
    active until the next move begins.
    """

    start_cell: Cell
    moves: tuple[ScriptMove, ...] = ()
    posture: dict[JointId, Vec3] = field(default_factory=dict)

    def __post_init__(self):
        times = [m.at_s for m in self.moves]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"move times must be strictly increasing: {times}")

    def to_dict(self) -> dict:
        return {
            "start_cell": list(self.start_cell),
            "moves": [
                {
                    "at_s": m.at_s,
                    "cell": list(m.cell),
                    "transit_s": m.transit_s,
                    "noise_std_m": m.noise_std_m,
                }
                for m in self.moves
            ],
            "posture": {
                j.value: [v.x, v.y, v.z] for j, v in self.posture.items()
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MovementScript":
        return cls(
            start_cell=tuple(obj["start_cell"]),
            moves=tuple(
                ScriptMove(
                    at_s=m["at_s"],
                    cell=tuple(m["cell"]),
                    transit_s=m["transit_s"],
                    noise_std_m=m.get("noise_std_m", 0.0),
                )
                for m in obj.get("moves", [])
            ),
            posture={
                JointId(k): Vec3(*v) for k, v in obj.get("posture", {}).items()
            },
        )


class ScriptedSource:
    """Synthesizes frames for a scripted player walking between cell centers."""

    def __init__(self, script: MovementScript, grid: GridFrame, seed: int = 0):
        self.script = script
        self.grid = grid
        self._rng = random.Random(seed)
        self._i = 0
        # Precompute (start_s, end_s, from_xz, to_xz, noise) segments.
        self._segments = []
        pos = grid.cell_center(script.start_cell)
        cursor = (pos.x, pos.z)
        for m in script.moves:
            target = grid.cell_center(m.cell)
            self._segments.append(
                (m.at_s, m.at_s + m.transit_s, cursor, (target.x, target.z), m.noise_std_m)
            )
            cursor = (target.x, target.z)
        self._initial = (pos.x, pos.z)

    def _position(self, t_s: float) -> tuple[float, float, float]:
        x, z = self._initial
        noise = 0.0
        for start, end, frm, to, n in self._segments:
            if t_s < start:
                break
            noise = n
            if t_s >= end:
                x, z = to
            else:
                a = (t_s - start) / (end - start) if end > start else 1.0
                x = frm[0] + (to[0] - frm[0]) * a
                z = frm[1] + (to[1] - frm[1]) * a
                break
        return x, z, noise

    def next_frame(self) -> Optional[SkeletonFrame]:
        t_ms = tick_to_ms(self._i)
        x, z, noise = self._position(self._i / TICK_HZ)
        if noise > 0:
            x += self._rng.gauss(0.0, noise)
            z += self._rng.gauss(0.0, noise)
        self._i += 1
        return synth_skeleton(x, z, t_ms, self.script.posture)


class ReplayFileSource:
    """Plays back the frames of a recorded session."""

    def __init__(self, path, speed_factor: float = 1.0):
        if speed_factor <= 0:
            raise ValueError(f"speed_factor must be positive, got {speed_factor}")
        from .recorder import read_session

        log = read_session(path, tolerant=True)
        self._frames = [r.frame for r in log.records if r.frame is not None]
        self.malformed_count = log.skipped
        self.speed_factor = speed_factor
        self._i = 0

    def next_frame(self) -> Optional[SkeletonFrame]:
        if self._i >= len(self._frames):
            return None
        frame = self._frames[self._i]
        self._i += 1
        if self.speed_factor != 1.0:
            frame = SkeletonFrame(
                t_ms=round(frame.t_ms / self.speed_factor),
                joints=frame.joints,
                confidence=frame.confidence,
            )
        return frame


class VirtualSource:
    """Synthesizes a skeleton standing wherever the UI last commanded it."""

    def __init__(self, grid: GridFrame, start_cell: Optional[Cell] = None):
        self.grid = grid
        self._cells = set(layout_cells(grid.layout))
        self._cell = start_cell if start_cell is not None else next(iter(layout_cells(grid.layout)))
        if self._cell not in self._cells:
            raise InvalidCell(f"{self._cell} not in {grid.layout.value}")
        self._i = 0
        self._lock = threading.Lock()

    def move(self, cell: Cell) -> None:
        cell = tuple(cell)
        if cell not in self._cells:
            raise InvalidCell(f"{cell} not in {self.grid.layout.value}")
        with self._lock:
            self._cell = cell

    def next_frame(self) -> Optional[SkeletonFrame]:
        with self._lock:
            cell = self._cell
        center = self.grid.cell_center(cell)
        frame = synth_skeleton(center.x, center.z, tick_to_ms(self._i))
        self._i += 1
        return frame


class NetworkSource:
    """Receives newline-delimited frame records over TCP.

    Frames use exactly the recorder's frame line format, so a sensor
    bridge can be as simple as `nc` piping a log. The queue is bounded;
    when the consumer falls behind, the oldest frames are dropped and
    counted.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, queue_max: int = 64):
        self._queue: deque[SkeletonFrame] = deque()
        self._queue_max = queue_max
        self._lock = threading.Lock()
        self.malformed_count = 0
        self.dropped_count = 0
        self._closed = False
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((host, port))
        self._server.listen(1)
        self.address = self._server.getsockname()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        from .recorder import parse_frame_obj

        while not self._closed:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            with conn:
                buf = b""
                while not self._closed:
                    try:
                        chunk = conn.recv(4096)
                    except OSError:
                        break
                    if not chunk:
                        break
                    buf += chunk
                    while b"\n" in buf:
                        line, buf = buf.split(b"\n", 1)
                        if not line.strip():
                            continue
                        try:
                            obj = json.loads(line)
                            frame = parse_frame_obj(obj)
                        except (ValueError, KeyError, TypeError):
                            self.malformed_count += 1
                            continue
                        with self._lock:
                            if len(self._queue) >= self._queue_max:
                                self._queue.popleft()
                                self.dropped_count += 1
                            self._queue.append(frame)

    def next_frame(self) -> Optional[SkeletonFrame]:
        with self._lock:
            return self._queue.popleft() if self._queue else None

    def close(self) -> None:
        self._closed = True
        try:
            self._server.close()
        except OSError:
            pass


def parse_source_descriptor(descriptor: str, grid: GridFrame, seed: int = 0):
    """Build a source from a CLI/service descriptor string.

    Forms: "virtual", "virtual:R,C", "script:PATH", "replay:PATH[:SPEED]",
    "network:HOST:PORT".
    """
    kind, _, rest = descriptor.partition(":")
    if kind == "virtual":
        start = tuple(int(v) for v in rest.split(",")) if rest else None
        return VirtualSource(grid, start_cell=start)
    if kind == "script":
        with open(rest, encoding="utf-8") as f:
            script = MovementScript.from_dict(json.load(f))
        return ScriptedSource(script, grid, seed=seed)
    if kind == "replay":
        path, _, speed = rest.partition(":")
        return ReplayFileSource(path, speed_factor=float(speed) if speed else 1.0)
    if kind == "network":
        host, _, port = rest.partition(":")
        return NetworkSource(host or "127.0.0.1", int(port or 0))
    raise ValueError(f"unknown source descriptor: {descriptor!r}")
