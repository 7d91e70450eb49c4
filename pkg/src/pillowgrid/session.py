"""Headless session execution and log replay.

`run_scripted_session` drives source -> engine -> recorder tick by tick;
`replay_log` rebuilds the engine from a log's header and re-derives the
event stream from the recorded frames and markers. For a clean log the
two event sequences are identical, which is the system's core determinism
guarantee.

Per-tick record order at equal timestamps: markers (command effects),
then the frame, then the events it produced. Markers tagged auto_* are
engine-internal transitions; replay does not apply them because the
engine reproduces them from the frame gaps itself.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Optional

from .calibration import GridFrame
from .engine import GameConfig, GameEngine, GameEvent, Phase, tick_to_ms
from .recorder import (
    LogRecord,
    SessionHeader,
    SessionLog,
    SessionWriter,
    quantize_frame,
)

MANUAL_MARKERS = ("pause", "resume")
AUTO_MARKERS = ("auto_pause", "auto_resume")


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def make_header(nickname: str, config: GameConfig, grid: GridFrame,
                started_at: Optional[str] = None) -> SessionHeader:
    return SessionHeader(
        nickname=nickname,
        config=config,
        grid=grid,
        started_at=started_at or utc_now_iso(),
    )


def phase_markers(before: Phase, before_auto: bool, engine: GameEngine) -> list[str]:
    """Auto pause/resume transitions caused by this tick, if any."""
    after = engine.state.phase
    after_auto = engine.state.auto_paused
    out = []
    if before is Phase.RUNNING and after is Phase.PAUSED and after_auto:
        out.append("auto_pause")
    if before is Phase.PAUSED and before_auto and after is Phase.RUNNING:
        out.append("auto_resume")
    return out


def run_scripted_session(
    config: GameConfig,
    grid: GridFrame,
    source,
    writer: Optional[SessionWriter] = None,
    max_ticks: int = 2_000_000,
) -> list[GameEvent]:
    """Run a game to completion against a frame source; returns all events."""
    engine = GameEngine(config, grid)
    engine.start()
    all_events: list[GameEvent] = []
    for _ in range(max_ticks):
        frame = source.next_frame()
        if frame is not None:
            frame = quantize_frame(frame)
        before, before_auto = engine.state.phase, engine.state.auto_paused
        t_ms = tick_to_ms(engine.state.tick)
        events = engine.tick(frame)
        if writer is not None:
            for marker in phase_markers(before, before_auto, engine):
                writer.append_marker(t_ms, marker)
            if frame is not None:
                writer.append_frame(frame)
            for event in events:
                writer.append_event(event)
        all_events.extend(events)
        if engine.state.phase is Phase.FINISHED:
            break
    else:
        raise RuntimeError(f"game did not finish within {max_ticks} ticks")
    if writer is not None:
        # Simulated sessions end on the simulated clock, keeping the whole
        # file a pure function of (config, script, seed, started_at).
        started = datetime.fromisoformat(writer.header.started_at)
        ended = started + timedelta(milliseconds=tick_to_ms(engine.state.tick))
        reason = engine.state.end_reason.value if engine.state.end_reason else None
        writer.close(end_reason=reason, ended_at=ended.isoformat())
    return all_events


def logged_events(log: SessionLog) -> list[GameEvent]:
    return [r.event for r in log.records if r.event is not None]


def replay_log(log: SessionLog, max_ticks: int = 2_000_000) -> list[GameEvent]:
    """Re-derive the event stream by driving a fresh engine with the log.

    Frames are scheduled on their original ticks (gaps replayed as missing
    frames) and manual pause/resume markers are re-applied at their ticks.
    """
    engine = GameEngine(log.header.config, log.header.grid)
    engine.start()
    frames = {r.t_ms: r.frame for r in log.records if r.frame is not None}
    markers: dict[int, list[str]] = {}
    for r in log.records:
        if r.kind == "marker" and r.marker in MANUAL_MARKERS:
            markers.setdefault(r.t_ms, []).append(r.marker)
    last_t = max((r.t_ms for r in log.records), default=0)

    events: list[GameEvent] = []
    for tick in range(max_ticks):
        t_ms = tick_to_ms(tick)
        for marker in markers.get(t_ms, ()):
            if marker == "pause":
                engine.pause()
            elif marker == "resume":
                engine.resume()
        events.extend(engine.tick(frames.get(t_ms)))
        if engine.state.phase is Phase.FINISHED:
            break
        if t_ms > last_t:
            # Ran out of recorded input before the game ended (truncated log).
            break
    return events
