"""Acceptance suite: one test per criterion, printed pass/fail lines.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
report lines.
"""

import json
import math
import random
from contextlib import contextmanager

import pytest

from pillowgrid.analytics import compute_stats
from pillowgrid.calibration import (
    CalibrationSample,
    GridLayout,
    default_grid,
    estimate_grid_frame,
    layout_cells,
    locate_cell,
)
from pillowgrid.engine import (
    DIFFICULTY_EASED,
    GAME_ENDED,
    RESOLVED,
    SCORE_CHANGED,
    TARGET_SHOWN,
    AdaptivePolicy,
    GameConfig,
    GameEngine,
    Mechanic,
    Phase,
    ViewMode,
    screen_cell,
)
from pillowgrid.levelgen import Prng
from pillowgrid.profiles import ProfileStore, load_defaults
from pillowgrid.recorder import SessionWriter, read_session, serialize_log
from pillowgrid.session import logged_events, make_header, replay_log, run_scripted_session
from pillowgrid.skeleton import (
    DEPTH_JOINTS,
    JointId,
    depth_offsets,
    joint_angle,
    segment_tilt,
)
from pillowgrid.sources import MovementScript, ScriptMove, ScriptedSource
from pillowgrid.skeleton import Vec3

from .conftest import random_frame
from .oracles import (
    angle_oracle,
    depth_oracle,
    random_rotation,
    rigid_transform_frame,
    tilt_oracle,
)


@contextmanager
def criterion(n, desc):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {n}: FAIL - {desc}", flush=True)
        raise
    print(f"[acceptance] criterion {n}: PASS - {desc}", flush=True)


def random_session(rng):
    """One randomized engine-level scripted session; returns its events."""
    mechanic = rng.choice([Mechanic.GRID_DANCE, Mechanic.RUNNER])
    layout = GridLayout.GRID3X3 if mechanic is Mechanic.GRID_DANCE else GridLayout.LINE3
    config = GameConfig(
        mechanic=mechanic,
        layout=layout,
        length=rng.randint(1, 6),
        shift_time_s=rng.uniform(0.1, 0.3),
        approach_time_s=rng.uniform(0.5, 1.0),
        spawn_interval_s=rng.uniform(0.5, 1.0),
        lives=rng.choice([None, None, 3, 5]),
        seed=rng.getrandbits(63),
        adaptive=AdaptivePolicy(
            ease_after_misses=rng.randint(1, 3), stop_after_misses=rng.randint(4, 9)
        ),
    )
    grid = default_grid(layout)
    cells = layout_cells(layout)
    engine = GameEngine(config, grid)
    engine.start()
    events = []
    for _ in range(200_000):
        inp = None if rng.random() < 0.02 else rng.choice(cells)
        events.extend(engine.tick(inp))
        if engine.state.phase is Phase.FINISHED:
            return events, engine
    raise RuntimeError("session did not finish")


def test_criterion_1_reward_only_scoring(rng):
    with criterion(1, "reward-only scoring over 1000 randomized sessions"):
        for _ in range(1000):
            events, engine = random_session(rng)
            score = 0
            for e in events:
                if e.kind == SCORE_CHANGED:
                    assert e.data["score"] == score + 1, "score must only ever step up"
                    score = e.data["score"]
            correct = sum(1 for e in events if e.kind == RESOLVED and e.data["correct"])
            assert engine.state.score == score == correct


def random_script(rng):
    cells = layout_cells(GridLayout.GRID3X3)
    moves = []
    t = 0.05
    for _ in range(rng.randint(1, 4)):
        moves.append(
            ScriptMove(
                at_s=round(t, 3),
                cell=rng.choice(cells),
                transit_s=round(rng.uniform(0.05, 0.4), 3),
                noise_std_m=rng.choice([0.0, 0.003, 0.01]),
            )
        )
        t += rng.uniform(0.3, 1.0)
    return MovementScript(start_cell=rng.choice(cells), moves=tuple(moves))


def test_criterion_2_determinism_replay_fidelity(rng, tmp_path):
    with criterion(2, "record->replay reproduces event log byte-for-byte on 100 seeds"):
        for i in range(100):
            seed = rng.getrandbits(63)
            config = GameConfig(
                mechanic=Mechanic.GRID_DANCE,
                length=rng.randint(1, 4),
                shift_time_s=rng.uniform(0.1, 0.4),
                seed=seed,
            )
            grid = default_grid(GridLayout.GRID3X3)
            path = tmp_path / f"{i}.session.jsonl"
            writer = SessionWriter(
                path, make_header("sim", config, grid, started_at="2026-08-10T00:00:00+00:00")
            )
            script = random_script(rng)
            live = run_scripted_session(
                config, grid, ScriptedSource(script, grid, seed=seed), writer=writer
            )
            log = read_session(path)
            replayed = replay_log(log)
            serialize = lambda evs: "\n".join(e.serialize() for e in evs).encode()
            assert serialize(replayed) == serialize(logged_events(log)) == serialize(live)


def test_criterion_3_calibration_accuracy(rng):
    with criterion(3, "grid estimation within 4 cm and locate_cell accuracy"):
        trials = 1000
        grid_ok = 0
        noisy_ok = noisy_total = 0
        clean_ok = clean_total = 0
        for _ in range(trials):
            pitch = rng.uniform(0.4, 0.8)
            theta = rng.uniform(0, 2 * math.pi)
            ox, oz = rng.uniform(-1, 1), rng.uniform(1, 3)

            def center(r, c):
                return Vec3(
                    ox + (r * math.sin(theta) + c * math.cos(theta)) * pitch,
                    0.0,
                    oz + (r * math.cos(theta) - c * math.sin(theta)) * pitch,
                )

            def noisy(p):  # 2 cm uniform noise band per floor axis
                return Vec3(
                    p.x + rng.uniform(-0.01, 0.01), 0.0, p.z + rng.uniform(-0.01, 0.01)
                )

            samples = [
                CalibrationSample(cell, noisy(center(*cell)), i * 1000)
                for i, cell in enumerate(((0, 0), (0, 2), (2, 0)))
            ]
            est = estimate_grid_frame(GridLayout.GRID3X3, samples)
            exact = estimate_grid_frame(
                GridLayout.GRID3X3,
                [CalibrationSample(c, center(*c), i) for i, c in enumerate(((0, 0), (0, 2), (2, 0)))],
            )
            worst = max(
                (est.cell_center((r, c)) - center(r, c)).norm()
                for r in range(3)
                for c in range(3)
            )
            if worst <= 0.04:
                grid_ok += 1
            for _ in range(3):
                cell = (rng.randrange(3), rng.randrange(3))
                ang = rng.uniform(0, 2 * math.pi)
                rad = rng.uniform(0, 0.3 * pitch)
                q = center(*cell) + Vec3(rad * math.cos(ang), 0.0, rad * math.sin(ang))
                clean_total += 1
                clean_ok += locate_cell(exact, q) == cell
                noisy_total += 1
                noisy_ok += locate_cell(est, q) == cell
        assert grid_ok / trials >= 0.99, f"grid accuracy {grid_ok / trials:.3f}"
        assert clean_ok == clean_total, "noise-free locate must be perfect"
        assert noisy_ok / noisy_total >= 0.99, f"noisy locate {noisy_ok / noisy_total:.3f}"


def test_criterion_4_paper_defaults(tmp_path):
    with criterion(4, "shipped shift time is 10 s; 15 s override merges and validates"):
        defaults = load_defaults()
        assert defaults["grid_dance"]["shift_time_s"] == 10.0
        store = ProfileStore(tmp_path / "root")
        store.create_profile("f6")
        assert store.effective_config("f6", Mechanic.GRID_DANCE).shift_time_s == 10.0
        merged = store.set_overrides("f6", Mechanic.GRID_DANCE, {"shift_time_s": 15.0})
        assert merged.shift_time_s == 15.0
        assert store.effective_config("f6", Mechanic.GRID_DANCE).shift_time_s == 15.0


def drive_outcomes(config, outcomes):
    grid = default_grid(config.layout)
    engine = GameEngine(config, grid)
    engine.start()
    events = []
    inp = (1, 1)
    for _ in range(500_000):
        st = engine.state
        want = outcomes[st.rounds_resolved] if st.rounds_resolved < len(outcomes) else True
        target = st.current_target
        if target is not None:
            inp = target if want else (target[0], (target[1] + 1) % 3)
        events.extend(engine.tick(inp))
        if engine.state.phase is Phase.FINISHED:
            return events
    raise RuntimeError("did not finish")


def test_criterion_5_adaptive_policy():
    with criterion(5, "6-miss session eases once at miss 3 (10->12.5 s), stops at miss 6"):
        cfg = GameConfig(mechanic=Mechanic.GRID_DANCE, length=10, shift_time_s=10.0, seed=8)
        events = drive_outcomes(cfg, [False] * 6)
        resolved = [e for e in events if e.kind == RESOLVED]
        eased = [e for e in events if e.kind == DIFFICULTY_EASED]
        ended = [e for e in events if e.kind == GAME_ENDED]
        assert len(resolved) == 6
        assert len(eased) == 1
        assert eased[0].data["shift_time_s"] == 12.5
        assert eased[0].t_ms == resolved[2].t_ms
        assert ended == [events[-1]]
        assert ended[0].data["reason"] == "adaptive_stop"
        assert ended[0].t_ms == resolved[5].t_ms

        # a hit anywhere resets the streak: no stop, single easing post-hit
        events = drive_outcomes(
            GameConfig(mechanic=Mechanic.GRID_DANCE, length=7, shift_time_s=10.0, seed=8),
            [False, False, True, False, False, False, True],
        )
        assert [e.data["reason"] for e in events if e.kind == GAME_ENDED] == ["completed"]
        eased = [e for e in events if e.kind == DIFFICULTY_EASED]
        resolved = [e for e in events if e.kind == RESOLVED]
        assert len(eased) == 1
        assert eased[0].t_ms == resolved[5].t_ms


def test_criterion_6_mirrored_mapping():
    with criterion(6, "screen mapping involution; identical physical outcomes across views"):
        cells = layout_cells(GridLayout.GRID3X3)
        for view in ViewMode:
            for cell in cells:
                assert screen_cell(screen_cell(cell, view), view) == cell
        for r in range(3):
            assert screen_cell((r, 1), ViewMode.MIRRORED) == (r, 1)

        outcomes = [True, False, True, True, False, False, True]
        runs = {}
        for view in ViewMode:
            cfg = GameConfig(
                mechanic=Mechanic.GRID_DANCE,
                length=len(outcomes),
                shift_time_s=0.2,
                seed=4242,
                view=view,
            )
            runs[view] = drive_outcomes(cfg, outcomes)
        physical = {
            view: [
                (e.t_ms, e.kind, json.dumps(e.data, sort_keys=True))
                for e in evs
                if e.kind in (RESOLVED, SCORE_CHANGED, GAME_ENDED)
            ]
            for view, evs in runs.items()
        }
        assert physical[ViewMode.THIRD_PERSON] == physical[ViewMode.MIRRORED]
        shown = {
            view: [tuple(e.data["cell"]) for e in evs if e.kind == TARGET_SHOWN]
            for view, evs in runs.items()
        }
        assert shown[ViewMode.THIRD_PERSON] == shown[ViewMode.MIRRORED]


def test_criterion_7_posture_metrics_oracle(rng):
    with criterion(7, "geometry matches brute-force recomputation on 10,000 frames"):
        joints = list(JointId)
        for i in range(10_000):
            f = random_frame(rng)
            a, v, c = rng.sample(joints, 3)
            assert joint_angle(f, a, v, c) == pytest.approx(angle_oracle(f, a, v, c), abs=1e-6)
            l, r = rng.sample(joints, 2)
            assert segment_tilt(f, l, r) == pytest.approx(tilt_oracle(f, l, r), abs=1e-6)
            offs = depth_offsets(f, DEPTH_JOINTS)
            want = depth_oracle(f, DEPTH_JOINTS)
            for j in DEPTH_JOINTS:
                assert offs[j] == pytest.approx(want[j], abs=1e-6)
            if i % 5 == 0:
                R = random_rotation(rng)
                t = [rng.uniform(-3, 3) for _ in range(3)]
                import numpy as np

                g = rigid_transform_frame(f, R, np.array(t))
                assert joint_angle(g, a, v, c) == pytest.approx(
                    joint_angle(f, a, v, c), abs=1e-6
                )


def test_criterion_8_log_robustness(rng, tmp_path):
    with criterion(8, "tolerant parsing of truncated/corrupted logs; footers verify"):
        clean_logs = []
        for i in range(10):
            config = GameConfig(
                mechanic=Mechanic.GRID_DANCE,
                length=3,
                shift_time_s=0.5,
                seed=rng.getrandbits(63),
            )
            grid = default_grid(GridLayout.GRID3X3)
            path = tmp_path / f"clean{i}.session.jsonl"
            writer = SessionWriter(path, make_header("f6", config, grid))
            run_scripted_session(
                config, grid, ScriptedSource(random_script(rng), grid, seed=i), writer=writer
            )
            clean_logs.append(path)

        for path in clean_logs:
            log = read_session(path, tolerant=True)
            assert log.skipped == 0
            assert log.footer is not None
            assert compute_stats(log).to_dict() == log.footer.summary

        # crash truncation: footer and tail lost, body still parses
        lines = clean_logs[0].read_text().splitlines()
        truncated = tmp_path / "trunc.session.jsonl"
        truncated.write_text("\n".join(lines[: len(lines) - 5]) + "\n")
        tlog = read_session(truncated, tolerant=True)
        assert tlog.footer is None
        assert len(tlog.records) == len(lines) - 6
        assert tlog.skipped == 0

        # 0.1% corruption: skip count is exact, everything else parses
        lines = clean_logs[1].read_text().splitlines()
        n_corrupt = max(1, round(len(lines) * 0.001))
        body_idx = rng.sample(range(1, len(lines) - 1), n_corrupt)
        for i in body_idx:
            lines[i] = lines[i][:10] + "#CORRUPT#" + lines[i][10:][::-1]
        corrupted = tmp_path / "corrupt.session.jsonl"
        corrupted.write_text("\n".join(lines) + "\n")
        clog = read_session(corrupted, tolerant=True)
        assert clog.skipped == n_corrupt
        assert len(clog.records) == len(lines) - 2 - n_corrupt


def test_criterion_9_prng_portability():
    with criterion(9, "splitmix64 seed-0 vector matches the independent reference"):
        p = Prng(0)
        assert p.next_u64() == 0xE220A8397B1DCDAF
        assert p.next_u64() == 0x6E789E6AA1B965F4
        assert p.next_u64() == 0x06C45D188009454F
        assert Prng(0).next_u64() == Prng(0).next_u64()
