"""Network boundary: REST for profiles/sessions, WebSocket for live games.

The station owns at most one live session at a time (one sensor, one
patient). All engine mutations funnel through a single command queue
drained by the station loop, so connection handlers never touch game
state directly. Outbound live messages carry a per-connection strictly
increasing `seq`; a bounded per-client buffer replays missed messages on
reconnect and inserts a gap marker when the buffer could not hold them.

Live message envelope:  {"type", "seq", "t_ms", "payload"}
  types: state (10 Hz snapshot), frame (<=15 Hz, toggleable per
  connection), event (every game event exactly once), calib, ack, error,
  gap.
Command envelope (client -> server): {"type", "seq", ...fields}; every
command is answered with an ack or error carrying cmd_seq = seq.

Command phase rules:
  start_session      any time except while a game is running
  begin_calibration  session open, no game running
  confirm_position / add_sample_ack   calibration in progress
  set_view           session open, no game running
  start_game         session open, layout calibrated, no game running
  pause / resume / abort / virtual_move   game open (virtual_move also
                     works between games for demo positioning)
"""

from __future__ import annotations

import asyncio
import json
import random
import time
import uuid
from collections import deque
from contextlib import asynccontextmanager
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse

from .analytics import compute_posture_trace, compute_stats, profile_trends, trace_csv_text
from .calibration import CalibrationWizard, GridFrame, GridLayout, default_grid
from .engine import GameEngine, InvalidPhase, Mechanic, Phase, ViewMode, tick_to_ms
from .profiles import (
    DuplicateNickname,
    InvalidMergedConfig,
    InvalidNickname,
    ProfileStore,
    UnknownNickname,
    UnknownSession,
    load_defaults,
)
from .recorder import (
    SessionWriter,
    frame_to_obj,
    quantize_frame,
    read_session,
    replay_iterate,
)
from .session import make_header, phase_markers, utc_now_iso
from .sources import InvalidCell, VirtualSource, parse_source_descriptor

LIVE_BUFFER_SECONDS = 10.0
STATE_EVERY_TICKS = 3  # 10 Hz at the 30 Hz loop
FRAME_EVERY_TICKS = 2  # 15 Hz


class _ClientBox:
    """Per-client outbound sequencing and reconnect buffer."""

    def __init__(self, client_id: str, frames_enabled: bool):
        self.client_id = client_id
        self.frames_enabled = frames_enabled
        self.next_seq = 1
        self.buffer: deque[tuple[int, float, str]] = deque()
        self.queue: Optional[asyncio.Queue] = None

    def push(self, message: dict) -> None:
        message["seq"] = self.next_seq
        self.next_seq += 1
        text = json.dumps(message, separators=(",", ":"))
        now = time.monotonic()
        self.buffer.append((message["seq"], now, text))
        while self.buffer and now - self.buffer[0][1] > LIVE_BUFFER_SECONDS:
            self.buffer.popleft()
        if self.queue is not None:
            self.queue.put_nowait(text)

    def replay_after(self, after_seq: int) -> tuple[bool, list[str]]:
        """(gap_occurred, buffered messages with seq > after_seq)."""
        missed = [text for seq, _, text in self.buffer if seq > after_seq]
        oldest_buffered = self.buffer[0][0] if self.buffer else self.next_seq
        gap = after_seq + 1 < oldest_buffered
        return gap, missed


@dataclass
class _LiveGame:
    engine: GameEngine
    writer: SessionWriter
    session_id: str
    storage_warned: bool = False


class Station:
    """Single live station: one session, one game at a time."""

    def __init__(self, store: ProfileStore, tick_interval: float, default_source: str):
        self.store = store
        self.tick_interval = tick_interval
        self.default_source = default_source
        self.commands: asyncio.Queue = asyncio.Queue()
        self.clients: dict[str, _ClientBox] = {}
        self.tick_count = 0
        self.nickname: Optional[str] = None
        self.source = None
        self.source_descriptor: Optional[str] = None
        self.grids: dict[GridLayout, GridFrame] = {}
        self.wizard: Optional[CalibrationWizard] = None
        self.view_preference: Optional[ViewMode] = None
        self.game: Optional[_LiveGame] = None
        self.last_error: Optional[str] = None
        self._task: Optional[asyncio.Task] = None

    # -- loop --------------------------------------------------------------

    def start_loop(self) -> None:
        self._task = asyncio.get_event_loop().create_task(self._run())

    async def stop_loop(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
        if self.game is not None:
            self._finish_game(aborted_reason="therapist_abort")

    async def _run(self) -> None:
        while True:
            try:
                self.step()
            except Exception as exc:  # the station must outlive handler bugs
                self.last_error = f"{type(exc).__name__}: {exc}"
                self._publish_error(None, None, "internal", self.last_error)
            await asyncio.sleep(self.tick_interval)

    def step(self) -> None:
        """One station tick: drain commands, advance the session, publish."""
        while True:
            try:
                client_id, msg = self.commands.get_nowait()
            except asyncio.QueueEmpty:
                break
            self._handle_command(client_id, msg)

        if self.source is not None:
            frame = self.source.next_frame()
            if frame is not None:
                frame = quantize_frame(frame)

            if self.wizard is not None and frame is not None:
                if self.wizard.feed(frame):
                    self._publish("calib", self.wizard.progress())

            game = self.game
            if game is not None:
                engine = game.engine
                before, before_auto = engine.state.phase, engine.state.auto_paused
                t_ms = tick_to_ms(engine.state.tick)
                if frame is not None:
                    # Sources run on their own clock; the log speaks game time.
                    frame = frame.at_time(t_ms)
                events = engine.tick(frame)
                for marker in phase_markers(before, before_auto, engine):
                    game.writer.append_marker(t_ms, marker)
                    self._publish("state", self._state_payload())
                if frame is not None:
                    game.writer.append_frame(frame)
                for event in events:
                    game.writer.append_event(event)
                    self._publish("event", event.to_dict())
                if game.writer.failed and not game.storage_warned:
                    game.storage_warned = True
                    self._publish_error(None, None, "storage_failure", game.writer.failure or "")
                if engine.state.phase is Phase.FINISHED:
                    self._finish_game()

            if frame is not None and self.tick_count % FRAME_EVERY_TICKS == 0:
                self._publish("frame", frame_to_obj(frame), frames_only=True)

        if self.tick_count % STATE_EVERY_TICKS == 0:
            self._publish("state", self._state_payload())
        self.tick_count += 1

    # -- publishing ----------------------------------------------------------

    def _now_ms(self) -> int:
        return self.tick_count * 1000 // 30

    def _publish(self, type_: str, payload: dict, frames_only: bool = False) -> None:
        for box in self.clients.values():
            if frames_only and not box.frames_enabled:
                continue
            box.push({"type": type_, "t_ms": self._now_ms(), "payload": payload})

    def _publish_to(self, client_id: Optional[str], type_: str, payload: dict) -> None:
        if client_id is None:
            self._publish(type_, payload)
            return
        box = self.clients.get(client_id)
        if box is not None:
            box.push({"type": type_, "t_ms": self._now_ms(), "payload": payload})

    def _publish_error(self, client_id, cmd, code: str, message: str, cmd_seq=None) -> None:
        self._publish_to(
            client_id,
            "error",
            {"command": cmd, "cmd_seq": cmd_seq, "code": code, "message": message},
        )

    def _state_payload(self) -> dict:
        return {
            "nickname": self.nickname,
            "source": self.source_descriptor,
            "calibrated_layouts": sorted(l.value for l in self.grids),
            "calibration": self.wizard.progress() if self.wizard else None,
            "view_preference": self.view_preference.value if self.view_preference else None,
            "game": self.game.engine.snapshot() if self.game else None,
            "session_id": self.game.session_id if self.game else None,
        }

    # -- commands ------------------------------------------------------------

    def _handle_command(self, client_id: str, msg: dict) -> None:
        cmd = msg.get("type")
        cmd_seq = msg.get("seq")

        def ack(**extra) -> None:
            self._publish_to(
                client_id, "ack", {"command": cmd, "cmd_seq": cmd_seq, "ok": True, **extra}
            )

        def err(code: str, message: str) -> None:
            self._publish_error(client_id, cmd, code, message, cmd_seq=cmd_seq)

        try:
            if cmd == "start_session":
                self._cmd_start_session(msg, ack, err)
            elif cmd == "begin_calibration":
                self._cmd_begin_calibration(msg, ack, err)
            elif cmd == "confirm_position":
                self._cmd_confirm_position(ack, err)
            elif cmd == "add_sample_ack":
                self._cmd_sample_ack(ack, err)
            elif cmd == "set_view":
                self._cmd_set_view(msg, ack, err)
            elif cmd == "start_game":
                self._cmd_start_game(msg, ack, err)
            elif cmd in ("pause", "resume", "abort"):
                self._cmd_game_control(cmd, ack, err)
            elif cmd == "virtual_move":
                self._cmd_virtual_move(msg, ack, err)
            else:
                err("unknown_command", f"unknown command type {cmd!r}")
        except Exception as exc:  # keep the loop alive on handler bugs
            err("internal", f"{type(exc).__name__}: {exc}")

    def _game_running(self) -> bool:
        return self.game is not None

    def _cmd_start_session(self, msg, ack, err) -> None:
        if self._game_running():
            err("conflict", "a game is already running")
            return
        nickname = msg.get("nickname", "")
        try:
            self.store.get_profile(nickname)
        except UnknownNickname:
            err("unknown_nickname", f"no profile {nickname!r}")
            return
        descriptor = msg.get("source") or self.default_source
        boot_grid = default_grid(GridLayout.GRID3X3)
        try:
            source = parse_source_descriptor(descriptor, boot_grid)
        except (ValueError, OSError) as exc:
            err("bad_source", str(exc))
            return
        self.nickname = nickname
        self.source = source
        self.source_descriptor = descriptor
        self.wizard = None
        self.view_preference = None
        self.grids = {}
        if isinstance(source, VirtualSource):
            # Demo mode: virtual players stand on known default grids.
            self.grids = {
                GridLayout.GRID3X3: default_grid(GridLayout.GRID3X3),
                GridLayout.LINE3: default_grid(GridLayout.LINE3),
            }
        ack(nickname=nickname)

    def _cmd_begin_calibration(self, msg, ack, err) -> None:
        if self.source is None:
            err("no_session", "start a session first")
            return
        if self._game_running():
            err("conflict", "cannot recalibrate while a game is running")
            return
        try:
            layout = GridLayout(msg.get("layout", "grid3x3"))
        except ValueError:
            err("bad_layout", f"unknown layout {msg.get('layout')!r}")
            return
        self.wizard = CalibrationWizard(layout)
        ack()
        self._publish("calib", self.wizard.progress())

    def _cmd_confirm_position(self, ack, err) -> None:
        if self.wizard is None:
            err("no_calibration", "calibration not in progress")
            return
        if self.wizard.confirm():
            ack()
            self._publish("calib", self.wizard.progress())
        else:
            err("not_ready", "no frame to confirm or awaiting acknowledgement")

    def _cmd_sample_ack(self, ack, err) -> None:
        if self.wizard is None:
            err("no_calibration", "calibration not in progress")
            return
        self.wizard.ack()
        ack()
        progress = self.wizard.progress()
        self._publish("calib", progress)
        if self.wizard.complete:
            self.grids[self.wizard.layout] = self.wizard.grid
            self.wizard = None

    def _cmd_set_view(self, msg, ack, err) -> None:
        if self.source is None:
            err("no_session", "start a session first")
            return
        if self._game_running():
            err("conflict", "view is chosen before the game begins")
            return
        try:
            self.view_preference = ViewMode(msg.get("view"))
        except ValueError:
            err("bad_view", f"unknown view {msg.get('view')!r}")
            return
        ack(view=self.view_preference.value)

    def _cmd_start_game(self, msg, ack, err) -> None:
        if self.source is None or self.nickname is None:
            err("no_session", "start a session first")
            return
        if self._game_running():
            err("conflict", "a game is already running")
            return
        try:
            mechanic = Mechanic(msg.get("mechanic", "grid_dance"))
        except ValueError:
            err("bad_mechanic", f"unknown mechanic {msg.get('mechanic')!r}")
            return
        extra = {}
        if msg.get("view") or self.view_preference:
            extra["view"] = msg.get("view") or self.view_preference.value
        if msg.get("theme"):
            extra["theme"] = msg["theme"]
        extra["seed"] = (
            msg["seed"] if msg.get("seed") is not None else random.getrandbits(63)
        )
        try:
            config = self.store.effective_config(self.nickname, mechanic, **extra)
        except (InvalidMergedConfig, ValueError) as exc:
            err("invalid_config", str(exc))
            return
        grid = self.grids.get(config.layout)
        if grid is None:
            err("not_calibrated", f"layout {config.layout.value} is not calibrated")
            return
        session_id, path = self.store.new_session_path(self.nickname)
        writer = SessionWriter(path, make_header(self.nickname, config, grid))
        engine = GameEngine(config, grid)
        engine.start()
        self.game = _LiveGame(engine=engine, writer=writer, session_id=session_id)
        ack(session_id=session_id, config=config.to_dict())
        self._publish("state", self._state_payload())

    def _cmd_game_control(self, cmd, ack, err) -> None:
        if self.game is None:
            err("no_game", "no game running")
            return
        engine = self.game.engine
        t_ms = tick_to_ms(engine.state.tick)
        try:
            if cmd == "pause":
                engine.pause()
                self.game.writer.append_marker(t_ms, "pause")
            elif cmd == "resume":
                engine.resume()
                self.game.writer.append_marker(t_ms, "resume")
            else:
                events = engine.abort()
                for event in events:
                    self.game.writer.append_event(event)
                    self._publish("event", event.to_dict())
                self._finish_game()
        except InvalidPhase as exc:
            err("invalid_phase", str(exc))
            return
        ack()
        self._publish("state", self._state_payload())

    def _cmd_virtual_move(self, msg, ack, err) -> None:
        if self.source is None or not isinstance(self.source, VirtualSource):
            err("not_virtual", "source is not virtual")
            return
        try:
            cell = tuple(int(v) for v in msg.get("cell", ()))
            self.source.move(cell)
        except (InvalidCell, TypeError, ValueError) as exc:
            err("invalid_cell", str(exc))
            return
        if self.game is not None:
            self.game.writer.append_marker(
                tick_to_ms(self.game.engine.state.tick), "virtual_move", cell=list(cell)
            )
        ack(cell=list(cell))

    def _finish_game(self, aborted_reason: Optional[str] = None) -> None:
        game = self.game
        if game is None:
            return
        reason = aborted_reason or (
            game.engine.state.end_reason.value if game.engine.state.end_reason else None
        )
        game.writer.close(end_reason=reason, ended_at=utc_now_iso())
        self.game = None
        self._publish("state", self._state_payload())


def _http_error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"code": code, "message": message})


def create_app(
    root,
    tick_interval: float = 1 / 30,
    default_source: str = "virtual",
) -> FastAPI:
    store = ProfileStore(root)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        station = Station(store, tick_interval, default_source)
        app.state.station = station
        station.start_loop()
        yield
        await station.stop_loop()

    app = FastAPI(title="pillowgrid", lifespan=lifespan)
    app.state.store = store

    @app.exception_handler(HTTPException)
    async def _on_http_error(request: Request, exc: HTTPException):
        detail = exc.detail
        if not isinstance(detail, dict):
            detail = {"code": "error", "message": str(detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    # -- REST ---------------------------------------------------------------

    @app.get("/defaults")
    async def get_defaults():
        return load_defaults()

    @app.post("/profiles", status_code=201)
    async def create_profile(body: dict):
        try:
            profile = store.create_profile(body.get("nickname", ""), notes=body.get("notes", ""))
        except InvalidNickname as exc:
            raise _http_error(422, "invalid_nickname", str(exc))
        except DuplicateNickname as exc:
            raise _http_error(409, "duplicate_nickname", str(exc))
        return profile.to_dict()

    @app.get("/profiles")
    async def list_profiles():
        return [p.to_dict() for p in store.list_profiles()]

    @app.get("/profiles/{nickname}")
    async def get_profile(nickname: str):
        try:
            return store.get_profile(nickname).to_dict()
        except UnknownNickname as exc:
            raise _http_error(404, "unknown_nickname", str(exc))

    @app.put("/profiles/{nickname}/config")
    async def put_config(nickname: str, body: dict):
        try:
            mechanic = Mechanic(body.get("mechanic", "grid_dance"))
            merged = store.set_overrides(nickname, mechanic, body.get("overrides", {}))
        except UnknownNickname as exc:
            raise _http_error(404, "unknown_nickname", str(exc))
        except (InvalidMergedConfig, ValueError) as exc:
            raise _http_error(422, "invalid_config", str(exc))
        return {"mechanic": mechanic.value, "effective": merged.to_dict()}

    @app.get("/profiles/{nickname}/sessions")
    async def list_sessions(nickname: str):
        try:
            refs = store.list_sessions(nickname)
        except UnknownNickname as exc:
            raise _http_error(404, "unknown_nickname", str(exc))
        return [
            {
                "session_id": r.session_id,
                "started_at": r.started_at,
                "stats": r.stats.to_dict(),
                "footer_missing": r.footer_missing,
            }
            for r in refs
        ]

    @app.get("/profiles/{nickname}/trends")
    async def get_trends(nickname: str):
        try:
            refs = store.list_sessions(nickname)
        except UnknownNickname as exc:
            raise _http_error(404, "unknown_nickname", str(exc))
        return profile_trends([(r.started_at, r.stats) for r in refs])

    def _load_session(session_id: str):
        try:
            path = store.session_path(session_id)
        except UnknownSession as exc:
            raise _http_error(404, "unknown_session", str(exc))
        return read_session(path, tolerant=True)

    @app.get("/sessions/{session_id}/stats")
    async def session_stats_endpoint(session_id: str):
        log = _load_session(session_id)
        stats = (
            log.footer.summary if log.footer is not None else compute_stats(log).to_dict()
        )
        return {
            "session_id": session_id,
            "nickname": log.header.nickname,
            "started_at": log.header.started_at,
            "stats": stats,
            "footer_missing": log.footer is None,
            "skipped_records": log.skipped,
        }

    @app.get("/sessions/{session_id}/trace.csv")
    async def session_trace(session_id: str):
        log = _load_session(session_id)
        return PlainTextResponse(
            trace_csv_text(compute_posture_trace(log)), media_type="text/csv"
        )

    @app.get("/sessions/{session_id}/replay")
    async def session_replay(
        session_id: str, from_ms: Optional[int] = None, to_ms: Optional[int] = None
    ):
        log = _load_session(session_id)

        def lines():
            yield json.dumps({"header": log.header.to_obj()}, separators=(",", ":")) + "\n"
            for record, metrics in replay_iterate(log, from_ms, to_ms):
                obj = {"record": record.to_obj()}
                if metrics is not None:
                    obj["metrics"] = metrics.to_dict()
                yield json.dumps(obj, separators=(",", ":")) + "\n"

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    # -- live channel ---------------------------------------------------------

    @app.websocket("/live")
    async def live(ws: WebSocket):
        station: Station = app.state.station
        await ws.accept()
        client_id = ws.query_params.get("client") or uuid.uuid4().hex
        frames_on = ws.query_params.get("frames", "on") != "off"
        after = ws.query_params.get("after")
        box = station.clients.get(client_id)
        if box is None:
            box = _ClientBox(client_id, frames_on)
            station.clients[client_id] = box
        box.frames_enabled = frames_on
        queue: asyncio.Queue = asyncio.Queue()
        if after is not None:
            gap, _ = box.replay_after(int(after))
            if gap:
                # Buffer no longer holds everything past `after`: mark the hole.
                box.push({"type": "gap", "t_ms": station._now_ms(), "payload": {}})
            _, missed = box.replay_after(int(after))
            for text in missed:
                queue.put_nowait(text)
        box.queue = queue

        async def sender():
            while True:
                text = await queue.get()
                await ws.send_text(text)

        send_task = asyncio.create_task(sender())
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    box.push(
                        {
                            "type": "error",
                            "t_ms": station._now_ms(),
                            "payload": {"code": "bad_json", "message": "unparseable command"},
                        }
                    )
                    continue
                await station.commands.put((client_id, msg))
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            if box.queue is queue:
                box.queue = None

    return app
