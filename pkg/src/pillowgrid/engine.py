"""Deterministic tick-driven game engine for the two mechanics.

The engine advances at a fixed 30 Hz logical tick and never reads a wall
clock: every resolution instant is computed in ticks, every event carries
the tick's millisecond timestamp, and all randomness comes from the seeded
generator. (config, seed, input stream) therefore fully determines the
emitted event sequence, which is what makes recorded sessions replayable.

Mechanics in brief:

* grid dance: a target cell is shown, a countdown of `shift_time_s` runs,
  and at zero the player's cell is checked against the target. Hit = +1
  score; miss = no score change. 2 s pause between rounds.
* runner: a wave with one safe lane spawns every `spawn_interval_s` and
  resolves `approach_time_s` later against the player's lane. Surviving a
  wave scores +1.

Scoring is reward-only: the score never decreases. Consecutive misses
drive the adaptive controller, which first slows the countdown and then
stops the game. View mode (mirrored vs third-person) affects only the
screen-side cell annotations on presentation events, never resolution.

Pauses freeze gameplay time: ticks keep counting (timestamps advance) but
round countdowns and wave schedules only consume ticks spent running.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .calibration import Cell, GridFrame, GridLayout, layout_cells, locate_cell, player_floor_point
from .levelgen import GeneratorConstraints, Prng, Wave, next_grid_target, next_wave
from .skeleton import SkeletonFrame

TICK_HZ = 30
INTER_ROUND_PAUSE_TICKS = 2 * TICK_HZ
SENSOR_GAP_TICKS = TICK_HZ  # >1 s without frames auto-pauses


class EngineError(RuntimeError):
    pass


class LayoutMismatch(EngineError):
    pass


class InvalidPhase(EngineError):
    pass


class Mechanic(str, Enum):
    RUNNER = "runner"
    GRID_DANCE = "grid_dance"


class Theme(str, Enum):
    MAGE = "mage"
    BEE = "bee"


class ViewMode(str, Enum):
    THIRD_PERSON = "third_person"
    MIRRORED = "mirrored"


class Phase(str, Enum):
    IDLE = "idle"
    RUNNING = "running"
    PAUSED = "paused"
    FINISHED = "finished"


class EndReason(str, Enum):
    COMPLETED = "completed"
    LIVES_EXHAUSTED = "lives_exhausted"
    ADAPTIVE_STOP = "adaptive_stop"
    THERAPIST_ABORT = "therapist_abort"


def screen_cell(cell: Cell, view: ViewMode) -> Cell:
    """Physical cell -> on-screen cell. Mirrored flips the column axis."""
    if view is ViewMode.MIRRORED:
        return (cell[0], 2 - cell[1])
    return cell


def screen_lane(lane: int, view: ViewMode) -> int:
    return 2 - lane if view is ViewMode.MIRRORED else lane


@dataclass(frozen=True)
class AdaptivePolicy:
    """Consecutive-miss thresholds for easing and stopping the game."""

    ease_after_misses: int = 3
    ease_factor: float = 1.25
    ease_cap_factor: float = 2.0
    stop_after_misses: int = 6

    def __post_init__(self):
        if not 1 <= self.ease_after_misses < self.stop_after_misses:
            raise ValueError(
                f"need 1 <= ease_after_misses < stop_after_misses, got "
                f"{self.ease_after_misses}/{self.stop_after_misses}"
            )
        if self.ease_factor <= 1.0:
            raise ValueError(f"ease_factor must exceed 1, got {self.ease_factor}")
        if self.ease_cap_factor < 1.0:
            raise ValueError(f"ease_cap_factor must be >= 1, got {self.ease_cap_factor}")

    def to_dict(self) -> dict:
        return {
            "ease_after_misses": self.ease_after_misses,
            "ease_factor": self.ease_factor,
            "ease_cap_factor": self.ease_cap_factor,
            "stop_after_misses": self.stop_after_misses,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AdaptivePolicy":
        return cls(
            ease_after_misses=obj.get("ease_after_misses", 3),
            ease_factor=obj.get("ease_factor", 1.25),
            ease_cap_factor=obj.get("ease_cap_factor", 2.0),
            stop_after_misses=obj.get("stop_after_misses", 6),
        )


@dataclass(frozen=True)
class GameConfig:
    mechanic: Mechanic
    theme: Theme = Theme.MAGE
    view: ViewMode = ViewMode.THIRD_PERSON
    layout: GridLayout = GridLayout.GRID3X3
    length: int = 10
    shift_time_s: float = 10.0
    approach_time_s: float = 10.0
    spawn_interval_s: float = 3.0
    lives: Optional[int] = None
    seed: int = 0
    adaptive: AdaptivePolicy = field(default_factory=AdaptivePolicy)
    constraints: GeneratorConstraints = field(default_factory=GeneratorConstraints)

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.shift_time_s <= 0:
            raise ValueError(f"shift_time_s must be positive, got {self.shift_time_s}")
        if self.approach_time_s <= 0:
            raise ValueError(f"approach_time_s must be positive, got {self.approach_time_s}")
        if not 0.5 <= self.spawn_interval_s <= 60.0:
            raise ValueError(f"spawn_interval_s out of [0.5, 60]: {self.spawn_interval_s}")
        if self.lives is not None and self.lives < 1:
            raise ValueError(f"lives must be >= 1 when set, got {self.lives}")
        expected = GridLayout.LINE3 if self.mechanic is Mechanic.RUNNER else GridLayout.GRID3X3
        if self.layout is not expected:
            raise ValueError(f"{self.mechanic.value} requires layout {expected.value}")

    @property
    def effective_spawn_interval_s(self) -> float:
        return (
            self.constraints.spawn_interval_s
            if self.constraints.spawn_interval_s is not None
            else self.spawn_interval_s
        )

    def to_dict(self) -> dict:
        return {
            "mechanic": self.mechanic.value,
            "theme": self.theme.value,
            "view": self.view.value,
            "layout": self.layout.value,
            "length": self.length,
            "shift_time_s": self.shift_time_s,
            "approach_time_s": self.approach_time_s,
            "spawn_interval_s": self.spawn_interval_s,
            "lives": self.lives,
            "seed": self.seed,
            "adaptive": self.adaptive.to_dict(),
            "constraints": self.constraints.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GameConfig":
        return cls(
            mechanic=Mechanic(obj["mechanic"]),
            theme=Theme(obj.get("theme", "mage")),
            view=ViewMode(obj.get("view", "third_person")),
            layout=GridLayout(obj.get("layout", cls._default_layout(obj["mechanic"]))),
            length=obj.get("length", 10),
            shift_time_s=obj.get("shift_time_s", 10.0),
            approach_time_s=obj.get("approach_time_s", 10.0),
            spawn_interval_s=obj.get("spawn_interval_s", 3.0),
            lives=obj.get("lives"),
            seed=obj.get("seed", 0),
            adaptive=AdaptivePolicy.from_dict(obj.get("adaptive", {})),
            constraints=GeneratorConstraints.from_dict(obj.get("constraints", {})),
        )

    @staticmethod
    def _default_layout(mechanic: str) -> str:
        return "line3" if mechanic == "runner" else "grid3x3"


# Event kinds.
TARGET_SHOWN = "target_shown"
WAVE_SPAWNED = "wave_spawned"
RESOLVED = "resolved"
SCORE_CHANGED = "score_changed"
DIFFICULTY_EASED = "difficulty_eased"
LIFE_LOST = "life_lost"
GAME_ENDED = "game_ended"
FEEDBACK_CUE = "feedback_cue"


@dataclass(frozen=True)
class GameEvent:
    t_ms: int
    kind: str
    data: dict

    def to_dict(self) -> dict:
        return {"t": self.t_ms, "kind": self.kind, **self.data}

    @classmethod
    def from_dict(cls, obj: dict) -> "GameEvent":
        data = {k: v for k, v in obj.items() if k not in ("t", "kind")}
        return cls(t_ms=obj["t"], kind=obj["kind"], data=data)

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass
class _ActiveWave:
    wave: Wave
    resolve_at: int  # in active (running) ticks


@dataclass
class GameState:
    phase: Phase = Phase.IDLE
    tick: int = 0
    active_tick: int = 0  # ticks spent in RUNNING; gameplay clock
    score: int = 0
    consecutive_misses: int = 0
    effective_shift_time_s: float = 0.0
    lives_remaining: Optional[int] = None
    end_reason: Optional[EndReason] = None
    auto_paused: bool = False
    gap_ticks: int = 0
    # grid-dance bookkeeping
    current_target: Optional[Cell] = None
    previous_target: Optional[Cell] = None
    round_started_active: int = 0
    next_round_at_active: int = 0
    rounds_resolved: int = 0
    # runner bookkeeping
    active_waves: list[_ActiveWave] = field(default_factory=list)
    waves_spawned: int = 0
    previous_safe_lane: Optional[int] = None


def tick_to_ms(tick: int) -> int:
    return tick * 1000 // TICK_HZ


def _ticks(seconds: float) -> int:
    return max(1, round(seconds * TICK_HZ))


class GameEngine:
    """Single-owner state machine; advance only via start/tick/commands."""

    def __init__(self, config: GameConfig, grid: GridFrame):
        if grid.layout is not config.layout:
            raise LayoutMismatch(
                f"config wants {config.layout.value}, grid is {grid.layout.value}"
            )
        self.config = config
        self.grid = grid
        self.rng = Prng(config.seed)
        self.state = GameState(
            effective_shift_time_s=config.shift_time_s,
            lives_remaining=config.lives,
        )
        self._last_input: Union[SkeletonFrame, Cell, None] = None
        self._valid_cells = set(layout_cells(config.layout))

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if self.state.phase is not Phase.IDLE:
            raise InvalidPhase(f"cannot start from {self.state.phase.value}")
        self.state.phase = Phase.RUNNING

    def pause(self) -> None:
        if self.state.phase is not Phase.RUNNING:
            raise InvalidPhase(f"cannot pause from {self.state.phase.value}")
        self.state.phase = Phase.PAUSED
        self.state.auto_paused = False

    def resume(self) -> None:
        if self.state.phase is not Phase.PAUSED:
            raise InvalidPhase(f"cannot resume from {self.state.phase.value}")
        self.state.phase = Phase.RUNNING
        self.state.auto_paused = False
        self.state.gap_ticks = 0

    def abort(self) -> list[GameEvent]:
        if self.state.phase not in (Phase.RUNNING, Phase.PAUSED):
            raise InvalidPhase(f"cannot abort from {self.state.phase.value}")
        events: list[GameEvent] = []
        self._end(EndReason.THERAPIST_ABORT, tick_to_ms(self.state.tick), events)
        return events

    # -- main loop ---------------------------------------------------------

    def tick(self, frame: Union[SkeletonFrame, Cell, None] = None) -> list[GameEvent]:
        """Advance one tick, consuming at most one input frame (or virtual cell)."""
        st = self.state
        if st.phase in (Phase.IDLE, Phase.FINISHED):
            raise InvalidPhase(f"tick in phase {st.phase.value}")
        t_ms = tick_to_ms(st.tick)
        events: list[GameEvent] = []

        if frame is None:
            st.gap_ticks += 1
        else:
            self._last_input = frame
            st.gap_ticks = 0
            if st.phase is Phase.PAUSED and st.auto_paused:
                st.phase = Phase.RUNNING
                st.auto_paused = False

        if st.phase is Phase.RUNNING and st.gap_ticks > SENSOR_GAP_TICKS:
            st.phase = Phase.PAUSED
            st.auto_paused = True

        if st.phase is Phase.RUNNING:
            if self.config.mechanic is Mechanic.GRID_DANCE:
                self._tick_grid(t_ms, events)
            else:
                self._tick_runner(t_ms, events)
            if st.phase is Phase.RUNNING:
                st.active_tick += 1

        st.tick += 1
        return events

    # -- mechanics ---------------------------------------------------------

    def _tick_grid(self, t_ms: int, events: list[GameEvent]) -> None:
        st = self.state
        if st.current_target is None:
            if st.active_tick < st.next_round_at_active:
                return
            target = next_grid_target(self.rng, self.config.constraints, st.previous_target)
            st.current_target = target
            st.round_started_active = st.active_tick
            events.append(
                GameEvent(
                    t_ms,
                    TARGET_SHOWN,
                    {
                        "cell": list(target),
                        "screen_cell": list(screen_cell(target, self.config.view)),
                    },
                )
            )
            return
        if st.active_tick - st.round_started_active >= _ticks(st.effective_shift_time_s):
            player = self._player_cell()
            correct = player == st.current_target
            st.previous_target = st.current_target
            st.current_target = None
            self._resolve(correct, player, t_ms, events)
            if st.phase is Phase.RUNNING:
                st.next_round_at_active = st.active_tick + INTER_ROUND_PAUSE_TICKS

    def _tick_runner(self, t_ms: int, events: list[GameEvent]) -> None:
        st = self.state
        cfg = self.config
        due = [w for w in st.active_waves if w.resolve_at <= st.active_tick]
        for aw in due:
            st.active_waves.remove(aw)
            player = self._player_cell()
            correct = player is not None and player[1] == aw.wave.safe_lane
            self._resolve(correct, player, t_ms, events)
            if st.phase is not Phase.RUNNING:
                return
        if (
            st.waves_spawned < cfg.length
            and st.active_tick >= st.waves_spawned * _ticks(cfg.effective_spawn_interval_s)
        ):
            wave = next_wave(
                self.rng, cfg.constraints, st.previous_safe_lane, spawn_tick=st.tick
            )
            st.previous_safe_lane = wave.safe_lane
            st.waves_spawned += 1
            st.active_waves.append(
                _ActiveWave(wave=wave, resolve_at=st.active_tick + _ticks(cfg.approach_time_s))
            )
            events.append(
                GameEvent(
                    t_ms,
                    WAVE_SPAWNED,
                    {
                        "safe_lane": wave.safe_lane,
                        "screen_lane": screen_lane(wave.safe_lane, cfg.view),
                        "blocked": list(wave.blocked),
                    },
                )
            )

    def _resolve(
        self, correct: bool, player: Optional[Cell], t_ms: int, events: list[GameEvent]
    ) -> None:
        st = self.state
        st.rounds_resolved += 1
        events.append(
            GameEvent(
                t_ms,
                RESOLVED,
                {"correct": correct, "player_cell": list(player) if player else None},
            )
        )
        if correct:
            st.score += 1
            events.append(GameEvent(t_ms, SCORE_CHANGED, {"score": st.score}))
        events.append(GameEvent(t_ms, FEEDBACK_CUE, {"positive": correct}))
        if not correct and st.lives_remaining is not None:
            st.lives_remaining -= 1
            events.append(GameEvent(t_ms, LIFE_LOST, {"lives_remaining": st.lives_remaining}))
            if st.lives_remaining == 0:
                self._end(EndReason.LIVES_EXHAUSTED, t_ms, events)
                return
        stop = adaptive_update(st, self.config, correct, t_ms, events)
        if stop:
            self._end(EndReason.ADAPTIVE_STOP, t_ms, events)
            return
        if st.rounds_resolved >= self.config.length:
            self._end(EndReason.COMPLETED, t_ms, events)

    def _end(self, reason: EndReason, t_ms: int, events: list[GameEvent]) -> None:
        self.state.phase = Phase.FINISHED
        self.state.end_reason = reason
        events.append(GameEvent(t_ms, GAME_ENDED, {"reason": reason.value}))

    def _player_cell(self) -> Optional[Cell]:
        inp = self._last_input
        if inp is None:
            return None
        if isinstance(inp, SkeletonFrame):
            return locate_cell(self.grid, player_floor_point(inp))
        cell = tuple(inp)
        return cell if cell in self._valid_cells else None

    # -- introspection -----------------------------------------------------

    def snapshot(self) -> dict:
        """Presentation-side view of the running game (for the live channel)."""
        st = self.state
        cfg = self.config
        countdown = None
        if st.phase in (Phase.RUNNING, Phase.PAUSED):
            if cfg.mechanic is Mechanic.GRID_DANCE and st.current_target is not None:
                remaining = _ticks(st.effective_shift_time_s) - (
                    st.active_tick - st.round_started_active
                )
                countdown = max(0, remaining) / TICK_HZ
            elif cfg.mechanic is Mechanic.RUNNER and st.active_waves:
                remaining = min(w.resolve_at for w in st.active_waves) - st.active_tick
                countdown = max(0, remaining) / TICK_HZ
        target = st.current_target
        return {
            "phase": st.phase.value,
            "t_ms": tick_to_ms(st.tick),
            "score": st.score,
            "countdown_s": countdown,
            "target_cell": list(target) if target else None,
            "screen_target_cell": list(screen_cell(target, cfg.view)) if target else None,
            "waves": [
                {
                    "safe_lane": w.wave.safe_lane,
                    "screen_lane": screen_lane(w.wave.safe_lane, cfg.view),
                    "resolve_in_s": max(0, w.resolve_at - st.active_tick) / TICK_HZ,
                }
                for w in st.active_waves
            ],
            "lives_remaining": st.lives_remaining,
            "consecutive_misses": st.consecutive_misses,
            "effective_shift_time_s": st.effective_shift_time_s,
            "rounds_resolved": st.rounds_resolved,
            "length": cfg.length,
            "end_reason": st.end_reason.value if st.end_reason else None,
            "view": cfg.view.value,
            "mechanic": cfg.mechanic.value,
        }


def adaptive_update(
    state: GameState,
    config: GameConfig,
    correct: bool,
    t_ms: int,
    events: list[GameEvent],
) -> bool:
    """Update the consecutive-miss controller after a resolution.

    Returns True when the game must stop. Easing fires exactly when the
    streak reaches `ease_after_misses`, multiplying the countdown (capped
    at the configured multiple of the initial time); a correct resolution
    resets the streak.
    """
    policy = config.adaptive
    if correct:
        state.consecutive_misses = 0
        return False
    state.consecutive_misses += 1
    if state.consecutive_misses == policy.ease_after_misses:
        cap = config.shift_time_s * policy.ease_cap_factor
        state.effective_shift_time_s = min(
            state.effective_shift_time_s * policy.ease_factor, cap
        )
        events.append(
            GameEvent(t_ms, DIFFICULTY_EASED, {"shift_time_s": state.effective_shift_time_s})
        )
    return state.consecutive_misses >= policy.stop_after_misses
