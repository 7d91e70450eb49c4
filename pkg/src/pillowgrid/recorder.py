"""Append-only session logs and their reader.

A session log is UTF-8 line-delimited JSON: a header line, a body of
time-ordered records, and a footer line. It is the system's single
interchange format: replay, analytics, and the network frame protocol all
speak it.

Line shapes (canonical JSON: sorted keys, no spaces):

    {"kind":"header","format_version":1,"nickname":...,"config":{...},
     "grid":{...},"seed":...,"started_at":...,"video_ref":null}
    {"t":33,"kind":"frame","joints":{"spine_base":[x,y,z],...}}
    {"t":500,"kind":"event","event":{"kind":"score_changed",...}}
    {"t":700,"kind":"marker","marker":"pause"}
    {"kind":"footer","summary":{...},"ended_at":...,"end_reason":...}

`t` is integer milliseconds from session start; wall-clock time appears
only in the header/footer. Joint coordinates are stored to 4 decimal
places (0.1 mm); the live pipeline quantizes frames *before* the engine
sees them so a replayed log drives the engine with bit-identical input.
At equal `t` the kind order is marker, frame, event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .engine import GameConfig, GameEvent
from .calibration import GridFrame
from .skeleton import JointId, PostureMetrics, SkeletonFrame, Vec3, posture_metrics

FORMAT_VERSION = 1


class RecorderError(ValueError):
    pass


class OutOfOrderRecord(RecorderError):
    pass


class MissingHeader(RecorderError):
    pass


class VersionUnsupported(RecorderError):
    pass


class MalformedRecord(RecorderError):
    pass


def canonical_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def quantize_frame(frame: SkeletonFrame) -> SkeletonFrame:
    """Round coordinates/confidences to the log's 4-decimal resolution."""
    return SkeletonFrame(
        t_ms=frame.t_ms,
        joints={
            j: Vec3(round(v.x, 4), round(v.y, 4), round(v.z, 4))
            for j, v in frame.joints.items()
        },
        confidence={j: round(c, 4) for j, c in frame.confidence.items()},
    )


def frame_to_obj(frame: SkeletonFrame) -> dict:
    obj = {
        "t": frame.t_ms,
        "kind": "frame",
        "joints": {
            j.value: [round(v.x, 4), round(v.y, 4), round(v.z, 4)]
            for j, v in frame.joints.items()
        },
    }
    if any(c != 1.0 for c in frame.confidence.values()):
        obj["conf"] = {j.value: round(c, 4) for j, c in frame.confidence.items()}
    return obj


def parse_frame_obj(obj: dict) -> SkeletonFrame:
    joints = {JointId(k): Vec3(*(float(x) for x in v)) for k, v in obj["joints"].items()}
    conf = {JointId(k): float(c) for k, c in obj.get("conf", {}).items()}
    return SkeletonFrame(t_ms=int(obj["t"]), joints=joints, confidence=conf)


@dataclass(frozen=True)
class LogRecord:
    """One body line: exactly one of frame/event/marker is set."""

    t_ms: int
    kind: str  # "frame" | "event" | "marker"
    frame: Optional[SkeletonFrame] = None
    event: Optional[GameEvent] = None
    marker: Optional[str] = None
    marker_data: dict = field(default_factory=dict)

    @classmethod
    def for_frame(cls, frame: SkeletonFrame) -> "LogRecord":
        return cls(t_ms=frame.t_ms, kind="frame", frame=frame)

    @classmethod
    def for_event(cls, event: GameEvent) -> "LogRecord":
        return cls(t_ms=event.t_ms, kind="event", event=event)

    @classmethod
    def for_marker(cls, t_ms: int, marker: str, **data) -> "LogRecord":
        return cls(t_ms=t_ms, kind="marker", marker=marker, marker_data=data)

    def to_obj(self) -> dict:
        if self.kind == "frame":
            return frame_to_obj(self.frame)
        if self.kind == "event":
            return {"t": self.t_ms, "kind": "event", "event": self.event.to_dict()}
        return {"t": self.t_ms, "kind": "marker", "marker": self.marker, **self.marker_data}

    @classmethod
    def from_obj(cls, obj: dict) -> "LogRecord":
        kind = obj.get("kind")
        if kind == "frame":
            return cls.for_frame(parse_frame_obj(obj))
        if kind == "event":
            return cls.for_event(GameEvent.from_dict(obj["event"]))
        if kind == "marker":
            data = {k: v for k, v in obj.items() if k not in ("t", "kind", "marker")}
            return cls(t_ms=int(obj["t"]), kind="marker", marker=obj["marker"], marker_data=data)
        raise MalformedRecord(f"unknown record kind: {kind!r}")


@dataclass(frozen=True)
class SessionHeader:
    nickname: str
    config: GameConfig
    grid: GridFrame
    started_at: str
    format_version: int = FORMAT_VERSION
    video_ref: Optional[str] = None

    @property
    def seed(self) -> int:
        return self.config.seed

    def to_obj(self) -> dict:
        return {
            "kind": "header",
            "format_version": self.format_version,
            "nickname": self.nickname,
            "config": self.config.to_dict(),
            "grid": self.grid.to_dict(),
            "seed": self.config.seed,
            "started_at": self.started_at,
            "video_ref": self.video_ref,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SessionHeader":
        return cls(
            nickname=obj["nickname"],
            config=GameConfig.from_dict(obj["config"]),
            grid=GridFrame.from_dict(obj["grid"]),
            started_at=obj["started_at"],
            format_version=obj["format_version"],
            video_ref=obj.get("video_ref"),
        )


@dataclass(frozen=True)
class SessionFooter:
    summary: dict
    ended_at: str
    end_reason: Optional[str]

    def to_obj(self) -> dict:
        return {
            "kind": "footer",
            "summary": self.summary,
            "ended_at": self.ended_at,
            "end_reason": self.end_reason,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "SessionFooter":
        return cls(
            summary=obj["summary"],
            ended_at=obj["ended_at"],
            end_reason=obj.get("end_reason"),
        )


@dataclass
class SessionLog:
    header: SessionHeader
    records: list[LogRecord]
    footer: Optional[SessionFooter] = None
    skipped: int = 0  # malformed lines ignored by the tolerant reader


def serialize_log(log: SessionLog) -> str:
    lines = [canonical_line(log.header.to_obj())]
    lines.extend(canonical_line(r.to_obj()) for r in log.records)
    if log.footer is not None:
        lines.append(canonical_line(log.footer.to_obj()))
    return "\n".join(lines) + "\n"


class SessionWriter:
    """Single writer for one session file.

    Appends are flushed immediately. A storage failure disables further
    recording (`failed` turns True) but never interrupts the session.
    """

    def __init__(self, path, header: SessionHeader):
        self.path = Path(path)
        self.header = header
        self.records: list[LogRecord] = []
        self.footer: Optional[SessionFooter] = None
        self.failed = False
        self.failure: Optional[str] = None
        self._last_t: Optional[int] = None
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._f = open(self.path, "w", encoding="utf-8")
            self._write_line(canonical_line(header.to_obj()))
        except OSError as exc:
            self._note_failure(exc)

    def append(self, record: LogRecord) -> None:
        if self._last_t is not None and record.t_ms < self._last_t:
            raise OutOfOrderRecord(f"t {record.t_ms} after {self._last_t}")
        self.records.append(record)
        self._last_t = record.t_ms
        if not self.failed:
            self._write_line(canonical_line(record.to_obj()))

    def append_event(self, event: GameEvent) -> None:
        self.append(LogRecord.for_event(event))

    def append_frame(self, frame: SkeletonFrame) -> None:
        self.append(LogRecord.for_frame(frame))

    def append_marker(self, t_ms: int, marker: str, **data) -> None:
        self.append(LogRecord.for_marker(t_ms, marker, **data))

    def close(self, end_reason: Optional[str], ended_at: str) -> SessionFooter:
        from .analytics import session_stats  # local import; analytics reads this module

        stats = session_stats(self.header, self.records, end_reason=end_reason)
        self.footer = SessionFooter(
            summary=stats.to_dict(), ended_at=ended_at, end_reason=end_reason
        )
        if not self.failed:
            self._write_line(canonical_line(self.footer.to_obj()))
            try:
                self._f.close()
            except (OSError, ValueError) as exc:
                self._note_failure(exc)
        return self.footer

    def _write_line(self, line: str) -> None:
        try:
            self._f.write(line + "\n")
            self._f.flush()
        except (OSError, ValueError) as exc:
            self._note_failure(exc)

    def _note_failure(self, exc: Exception) -> None:
        self.failed = True
        self.failure = str(exc)


def read_session(path, tolerant: bool = False) -> SessionLog:
    """Parse a session file, validating structure and time order.

    Tolerant mode keeps going past malformed or out-of-order lines and
    reports how many were skipped; it also accepts a missing footer
    (crash-truncated sessions stay readable).
    """
    path = Path(path)
    header: Optional[SessionHeader] = None
    records: list[LogRecord] = []
    footer: Optional[SessionFooter] = None
    skipped = 0
    last_t: Optional[int] = None

    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line:
                continue
            if header is None:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MissingHeader(f"first line is not JSON: {exc}") from exc
                if obj.get("kind") != "header":
                    raise MissingHeader(f"first record kind is {obj.get('kind')!r}")
                if obj.get("format_version", 0) > FORMAT_VERSION:
                    raise VersionUnsupported(f"format_version {obj.get('format_version')}")
                header = SessionHeader.from_obj(obj)
                continue
            try:
                obj = json.loads(line)
                kind = obj.get("kind")
                if kind == "footer":
                    if footer is not None:
                        raise MalformedRecord("duplicate footer")
                    footer = SessionFooter.from_obj(obj)
                    continue
                if footer is not None:
                    raise MalformedRecord("record after footer")
                record = LogRecord.from_obj(obj)
                if last_t is not None and record.t_ms < last_t:
                    raise OutOfOrderRecord(f"t {record.t_ms} after {last_t}")
            except (RecorderError, ValueError, KeyError, TypeError) as exc:
                if tolerant:
                    skipped += 1
                    continue
                if isinstance(exc, RecorderError):
                    raise
                raise MalformedRecord(f"bad line: {line[:80]}") from exc
            records.append(record)
            last_t = record.t_ms

    if header is None:
        raise MissingHeader(f"{path} is empty")
    return SessionLog(header=header, records=records, footer=footer, skipped=skipped)


def replay_iterate(
    log: SessionLog,
    from_ms: Optional[int] = None,
    to_ms: Optional[int] = None,
) -> Iterator[tuple[LogRecord, Optional[PostureMetrics]]]:
    """Time-windowed pass over the body with per-frame posture metrics."""
    lo = from_ms if from_ms is not None else 0
    hi = to_ms if to_ms is not None else float("inf")
    for record in log.records:
        if record.t_ms < lo:
            continue
        if record.t_ms > hi:
            break
        metrics = posture_metrics(record.frame) if record.frame is not None else None
        yield record, metrics
