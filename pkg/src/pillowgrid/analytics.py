"""Quantitative session and trend statistics for therapists.

Everything here is a pure function of session logs (or their stats), so
results are reproducible and the recorder's footer can be verified by
recomputation.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Optional

from . import engine as ev
from .calibration import locate_cell, player_floor_point
from .recorder import LogRecord, SessionHeader, SessionLog
from .skeleton import DEPTH_JOINTS, PostureMetrics, posture_metrics


@dataclass(frozen=True)
class SessionStats:
    duration_s: float
    frames: int
    rounds_or_waves: int
    correct: int
    missed: int
    final_score: int
    hit_rate: float
    mean_shift_latency_s: Optional[float]
    median_shift_latency_s: Optional[float]
    difficulty_eased_count: int
    end_reason: Optional[str]

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "frames": self.frames,
            "rounds_or_waves": self.rounds_or_waves,
            "correct": self.correct,
            "missed": self.missed,
            "final_score": self.final_score,
            "hit_rate": self.hit_rate,
            "mean_shift_latency_s": self.mean_shift_latency_s,
            "median_shift_latency_s": self.median_shift_latency_s,
            "difficulty_eased_count": self.difficulty_eased_count,
            "end_reason": self.end_reason,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SessionStats":
        return cls(
            duration_s=obj["duration_s"],
            frames=obj["frames"],
            rounds_or_waves=obj["rounds_or_waves"],
            correct=obj["correct"],
            missed=obj["missed"],
            final_score=obj["final_score"],
            hit_rate=obj["hit_rate"],
            mean_shift_latency_s=obj.get("mean_shift_latency_s"),
            median_shift_latency_s=obj.get("median_shift_latency_s"),
            difficulty_eased_count=obj.get("difficulty_eased_count", 0),
            end_reason=obj.get("end_reason"),
        )


def session_stats(
    header: SessionHeader,
    records: list[LogRecord],
    end_reason: Optional[str] = None,
) -> SessionStats:
    """Stats over a session body.

    Shift latency is measured per grid round: from the target being shown
    to the first frame standing on it, counted only up to that round's
    resolution. Rounds the player never reached are excluded from the
    latency aggregate.
    """
    frames = 0
    correct = 0
    missed = 0
    score = 0
    eased = 0
    latencies: list[float] = []
    pending_target = None  # (cell, shown_at_ms) with latency still unmeasured
    first_t = None
    last_t = None

    for record in records:
        if first_t is None:
            first_t = record.t_ms
        last_t = record.t_ms
        if record.kind == "frame":
            frames += 1
            if pending_target is not None:
                cell = locate_cell(header.grid, player_floor_point(record.frame))
                if cell == pending_target[0]:
                    latencies.append((record.t_ms - pending_target[1]) / 1000.0)
                    pending_target = None
        elif record.kind == "event":
            e = record.event
            if e.kind == ev.TARGET_SHOWN:
                pending_target = (tuple(e.data["cell"]), e.t_ms)
            elif e.kind == ev.RESOLVED:
                pending_target = None
                if e.data["correct"]:
                    correct += 1
                else:
                    missed += 1
            elif e.kind == ev.SCORE_CHANGED:
                score = e.data["score"]
            elif e.kind == ev.DIFFICULTY_EASED:
                eased += 1
            elif e.kind == ev.GAME_ENDED and end_reason is None:
                end_reason = e.data["reason"]

    resolved = correct + missed
    return SessionStats(
        duration_s=((last_t - first_t) / 1000.0) if records else 0.0,
        frames=frames,
        rounds_or_waves=resolved,
        correct=correct,
        missed=missed,
        final_score=score,
        hit_rate=(correct / resolved) if resolved else 0.0,
        mean_shift_latency_s=statistics.fmean(latencies) if latencies else None,
        median_shift_latency_s=statistics.median(latencies) if latencies else None,
        difficulty_eased_count=eased,
        end_reason=end_reason,
    )


def compute_stats(log: SessionLog) -> SessionStats:
    return session_stats(log.header, log.records)


@dataclass
class PostureTrace:
    """Per-frame posture series; frames with any uncomputable metric are skipped."""

    times_ms: list[int] = field(default_factory=list)
    metrics: list[PostureMetrics] = field(default_factory=list)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.metrics)

    def summary(self) -> dict:
        out = {}
        for name in (
            "shoulder_tilt_deg",
            "hip_tilt_deg",
            "knee_l_deg",
            "knee_r_deg",
            "ankle_l_deg",
            "ankle_r_deg",
        ):
            values = [getattr(m, name) for m in self.metrics]
            out[name] = (
                {"min": min(values), "max": max(values), "mean": statistics.fmean(values)}
                if values
                else None
            )
        return out


def compute_posture_trace(log: SessionLog) -> PostureTrace:
    trace = PostureTrace()
    for record in log.records:
        if record.kind != "frame":
            continue
        m = posture_metrics(record.frame)
        if not m.complete:
            trace.skipped += 1
            continue
        trace.times_ms.append(record.t_ms)
        trace.metrics.append(m)
    return trace


TRACE_CSV_COLUMNS = (
    "t_ms",
    "shoulder_tilt_deg",
    "hip_tilt_deg",
    "knee_l_deg",
    "knee_r_deg",
    "ankle_l_deg",
    "ankle_r_deg",
) + tuple(f"depth_{j.value}_m" for j in DEPTH_JOINTS)


def trace_csv_text(trace: PostureTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(TRACE_CSV_COLUMNS)
    for t, m in zip(trace.times_ms, trace.metrics):
        row = [
            t,
            f"{m.shoulder_tilt_deg:.4f}",
            f"{m.hip_tilt_deg:.4f}",
            f"{m.knee_l_deg:.4f}",
            f"{m.knee_r_deg:.4f}",
            f"{m.ankle_l_deg:.4f}",
            f"{m.ankle_r_deg:.4f}",
        ]
        row.extend(f"{m.depth_offsets[j]:.4f}" for j in DEPTH_JOINTS)
        writer.writerow(row)
    return buf.getvalue()


def export_trace_csv(trace: PostureTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(trace_csv_text(trace))


_STATS_CSV_KEYS = (
    "duration_s",
    "frames",
    "rounds_or_waves",
    "correct",
    "missed",
    "final_score",
    "hit_rate",
    "mean_shift_latency_s",
    "median_shift_latency_s",
    "difficulty_eased_count",
    "end_reason",
)


def export_stats_csv(entries: Iterable[tuple[str, SessionStats]], path) -> None:
    """One row per session from (started_at, stats) pairs."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("started_at",) + _STATS_CSV_KEYS)
        for started_at, stats in entries:
            d = stats.to_dict()
            writer.writerow([started_at] + [d[k] for k in _STATS_CSV_KEYS])


def iso_week(started_at: str) -> str:
    dt = datetime.fromisoformat(started_at)
    year, week, _ = dt.isocalendar()
    return f"{year}-W{week:02d}"


def profile_trends(sessions: list[tuple[str, SessionStats]]) -> dict:
    """Play-frequency and progress trends over (started_at, stats) pairs.

    Sessions must be sorted by start time. The latency delta compares the
    first and last sessions that have a measured latency (negative means
    the patient got faster).
    """
    weekly: dict[str, int] = {}
    for started_at, _ in sessions:
        week = iso_week(started_at)
        weekly[week] = weekly.get(week, 0) + 1
    with_latency = [s for _, s in sessions if s.mean_shift_latency_s is not None]
    latency_delta = (
        with_latency[-1].mean_shift_latency_s - with_latency[0].mean_shift_latency_s
        if len(with_latency) >= 2
        else None
    )
    return {
        "sessions": len(sessions),
        "weekly_counts": weekly,
        "total_minutes": sum(s.duration_s for _, s in sessions) / 60.0,
        "score_series": [s.final_score for _, s in sessions],
        "hit_rate_series": [s.hit_rate for _, s in sessions],
        "latency_delta_s": latency_delta,
    }
