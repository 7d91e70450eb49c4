import csv
import math

import pytest

from pillowgrid.analytics import (
    SessionStats,
    compute_posture_trace,
    compute_stats,
    export_trace_csv,
    iso_week,
    profile_trends,
    session_stats,
    trace_csv_text,
)
from pillowgrid.calibration import GridLayout, default_grid
from pillowgrid.engine import GameConfig, GameEvent, Mechanic
from pillowgrid.recorder import LogRecord, SessionWriter, quantize_frame, read_session
from pillowgrid.session import make_header, run_scripted_session
from pillowgrid.skeleton import JointId, Vec3
from pillowgrid.sources import MovementScript, ScriptMove, ScriptedSource, synth_skeleton

GRID = default_grid(GridLayout.GRID3X3)


def scripted_log(tmp_path, outcomes, name="s", posture=None, shift=0.2, seed=11):
    """Record a session whose rounds hit/miss per `outcomes` using cell scripting.

    Builds a movement script that walks onto the target (known because the
    seed pins the generator) or onto a neighbor.
    """
    from pillowgrid.engine import GameEngine, Phase

    cfg = GameConfig(
        mechanic=Mechanic.GRID_DANCE, length=len(outcomes), shift_time_s=shift, seed=seed
    )
    # dry-run to learn the target sequence
    engine = GameEngine(cfg, GRID)
    engine.start()
    targets = []
    inp = (1, 1)
    while engine.state.phase is not Phase.FINISHED:
        t = engine.state.current_target
        if t is not None:
            inp = t
        events = engine.tick(inp)
        for e in events:
            if e.kind == "target_shown":
                targets.append((tuple(e.data["cell"]), e.t_ms))
    assert len(targets) == len(outcomes)

    moves = []
    for (cell, shown_ms), hit in zip(targets, outcomes):
        dest = cell if hit else (cell[0], (cell[1] + 1) % 3)
        moves.append(ScriptMove(at_s=shown_ms / 1000 + 0.02, cell=dest, transit_s=0.05))
    script = MovementScript(start_cell=(1, 1), moves=tuple(moves), posture=posture or {})
    path = tmp_path / f"{name}.session.jsonl"
    writer = SessionWriter(path, make_header("f6", cfg, GRID))
    run_scripted_session(cfg, GRID, ScriptedSource(script, GRID, seed=seed), writer=writer)
    return read_session(path)


class TestComputeStats:
    def test_counts_match_outcomes(self, tmp_path):
        log = scripted_log(tmp_path, [True, False, True, True, False])
        stats = compute_stats(log)
        assert stats.rounds_or_waves == 5
        assert stats.correct == 3
        assert stats.missed == 2
        assert stats.final_score == 3
        assert stats.hit_rate == pytest.approx(0.6)
        assert stats.end_reason == "completed"

    def test_zero_resolved_rounds(self):
        cfg = GameConfig(mechanic=Mechanic.GRID_DANCE, seed=1)
        header = make_header("f6", cfg, GRID)
        stats = session_stats(header, [])
        assert stats.hit_rate == 0.0
        assert stats.rounds_or_waves == 0
        assert stats.mean_shift_latency_s is None
        assert stats.duration_s == 0.0

    def test_duration_is_last_minus_first(self, tmp_path):
        log = scripted_log(tmp_path, [True, True])
        stats = compute_stats(log)
        assert stats.duration_s == pytest.approx(
            (log.records[-1].t_ms - log.records[0].t_ms) / 1000
        )

    def test_latency_measures_first_entry(self):
        cfg = GameConfig(mechanic=Mechanic.GRID_DANCE, seed=1)
        header = make_header("f6", cfg, GRID)
        away = GRID.cell_center((0, 0))
        on_target = GRID.cell_center((2, 2))

        def frame_at(t, p):
            return LogRecord.for_frame(quantize_frame(synth_skeleton(p.x, p.z, t)))

        records = [
            LogRecord.for_event(
                GameEvent(0, "target_shown", {"cell": [2, 2], "screen_cell": [2, 2]})
            ),
            frame_at(100, away),
            frame_at(400, on_target),   # first entry: latency 0.4 s
            frame_at(700, on_target),
            LogRecord.for_event(GameEvent(1000, "resolved", {"correct": True, "player_cell": [2, 2]})),
            # second round: never reached -> excluded
            LogRecord.for_event(
                GameEvent(1200, "target_shown", {"cell": [0, 0], "screen_cell": [0, 0]})
            ),
            frame_at(1300, on_target),
            LogRecord.for_event(GameEvent(2200, "resolved", {"correct": False, "player_cell": [2, 2]})),
        ]
        stats = session_stats(header, records)
        assert stats.mean_shift_latency_s == pytest.approx(0.4)
        assert stats.median_shift_latency_s == pytest.approx(0.4)

    def test_stats_deterministic(self, tmp_path):
        log = scripted_log(tmp_path, [True, False, True])
        assert compute_stats(log) == compute_stats(log)

    def test_live_prefix_counts_monotone(self, tmp_path):
        log = scripted_log(tmp_path, [True, False, True, False])
        full = compute_stats(log)
        for cut in range(0, len(log.records), 97):
            partial = session_stats(log.header, log.records[:cut])
            assert partial.correct <= full.correct
            assert partial.missed <= full.missed
            assert partial.final_score <= full.final_score
            assert partial.frames <= full.frames


class TestPostureTrace:
    def test_upright_session_knee_mean_180(self, tmp_path):
        log = scripted_log(tmp_path, [True, True])
        trace = compute_posture_trace(log)
        assert trace.skipped == 0
        summary = trace.summary()
        assert summary["knee_l_deg"]["mean"] == pytest.approx(180.0, abs=1e-6)
        assert summary["knee_r_deg"]["mean"] == pytest.approx(180.0, abs=1e-6)

    def test_lower_left_hip_gives_positive_tilt(self, tmp_path):
        posture = {JointId.HIP_L: Vec3(0.0, -0.05, 0.0)}
        log = scripted_log(tmp_path, [True, True], posture=posture)
        trace = compute_posture_trace(log)
        mean_tilt = trace.summary()["hip_tilt_deg"]["mean"]
        assert mean_tilt > 1.0  # right hip higher => positive by convention

    def test_length_plus_skipped_equals_frames(self, tmp_path):
        log = scripted_log(tmp_path, [True])
        trace = compute_posture_trace(log)
        frames = sum(1 for r in log.records if r.kind == "frame")
        assert len(trace) + trace.skipped == frames

    def test_degenerate_frames_counted(self):
        cfg = GameConfig(mechanic=Mechanic.GRID_DANCE, seed=1)
        header = make_header("f6", cfg, GRID)
        good = synth_skeleton(0, 2, 0)
        joints = dict(good.joints)
        joints[JointId.KNEE_L] = joints[JointId.HIP_L]  # degenerate left knee
        from pillowgrid.skeleton import SkeletonFrame

        bad = SkeletonFrame(t_ms=33, joints=joints)
        from pillowgrid.recorder import SessionLog

        log = SessionLog(
            header=header,
            records=[LogRecord.for_frame(good), LogRecord.for_frame(bad)],
        )
        trace = compute_posture_trace(log)
        assert len(trace) == 1
        assert trace.skipped == 1


class TestCsvExport:
    def test_empty_trace_header_only(self, tmp_path):
        from pillowgrid.analytics import PostureTrace

        out = tmp_path / "empty.csv"
        export_trace_csv(PostureTrace(), out)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("t_ms,shoulder_tilt_deg,hip_tilt_deg")

    def test_row_count_and_reparse(self, tmp_path):
        log = scripted_log(tmp_path, [True, False])
        trace = compute_posture_trace(log)
        out = tmp_path / "trace.csv"
        export_trace_csv(trace, out)
        with open(out, newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == len(trace)
        for row, t, m in zip(rows, trace.times_ms, trace.metrics):
            assert int(row["t_ms"]) == t
            assert float(row["knee_l_deg"]) == pytest.approx(m.knee_l_deg, abs=5e-5)
            assert float(row["shoulder_tilt_deg"]) == pytest.approx(
                m.shoulder_tilt_deg, abs=5e-5
            )
            assert float(row["depth_knee_l_m"]) == pytest.approx(
                m.depth_offsets[JointId.KNEE_L], abs=5e-5
            )

    def test_crlf_line_endings(self, tmp_path):
        log = scripted_log(tmp_path, [True])
        text = trace_csv_text(compute_posture_trace(log))
        assert "\r\n" in text


class TestTrends:
    def stats_with(self, score, latency, duration=60.0):
        return SessionStats(
            duration_s=duration,
            frames=1800,
            rounds_or_waves=10,
            correct=score,
            missed=10 - score,
            final_score=score,
            hit_rate=score / 10,
            mean_shift_latency_s=latency,
            median_shift_latency_s=latency,
            difficulty_eased_count=0,
            end_reason="completed",
        )

    def test_same_week_counted_together(self):
        sessions = [
            ("2026-08-10T10:00:00+00:00", self.stats_with(5, 5.0)),
            ("2026-08-11T10:00:00+00:00", self.stats_with(6, 4.0)),
            ("2026-08-12T10:00:00+00:00", self.stats_with(7, 3.0)),
        ]
        trends = profile_trends(sessions)
        assert trends["weekly_counts"] == {iso_week("2026-08-10T10:00:00+00:00"): 3}
        assert trends["sessions"] == 3
        assert trends["total_minutes"] == pytest.approx(3.0)

    def test_empty(self):
        trends = profile_trends([])
        assert trends["sessions"] == 0
        assert trends["weekly_counts"] == {}
        assert trends["latency_delta_s"] is None

    def test_improving_latency_negative_delta(self):
        sessions = [
            ("2026-08-01T10:00:00+00:00", self.stats_with(5, 5.0)),
            ("2026-08-05T10:00:00+00:00", self.stats_with(6, 3.0)),
            ("2026-08-09T10:00:00+00:00", self.stats_with(8, 2.0)),
        ]
        assert profile_trends(sessions)["latency_delta_s"] == pytest.approx(-3.0)

    def test_score_and_hit_rate_series(self):
        sessions = [
            ("2026-08-01T10:00:00+00:00", self.stats_with(5, 5.0)),
            ("2026-08-05T10:00:00+00:00", self.stats_with(8, 3.0)),
        ]
        trends = profile_trends(sessions)
        assert trends["score_series"] == [5, 8]
        assert trends["hit_rate_series"] == [0.5, 0.8]
