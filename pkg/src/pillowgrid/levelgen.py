"""Seeded level generation for both game mechanics.

All randomness flows through splitmix64 so that a session is fully
reproducible from its seed, on any platform, and a recorded session can be
regenerated bit-for-bit. Candidate enumeration order is fixed (row-major)
for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .calibration import Cell

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15

GRID_CELLS: tuple[Cell, ...] = tuple((r, c) for r in range(3) for c in range(3))
LANES: tuple[int, ...] = (0, 1, 2)


class EmptyCandidateSet(RuntimeError):
    """The constraints exclude every cell (unreachable with defaults)."""


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (output, new_state)."""
    state = (state + _GOLDEN) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


@dataclass
class Prng:
    state: int

    def __post_init__(self):
        self.state &= _MASK64

    def next_u64(self) -> int:
        value, self.state = splitmix64(self.state)
        return value

    def below(self, n: int) -> int:
        return self.next_u64() % n

    def chance(self, p: float) -> bool:
        # 53-bit uniform in [0, 1); p=0 never fires, p=1 always does.
        return (self.next_u64() >> 11) * 2.0**-53 < p


@dataclass(frozen=True)
class GeneratorConstraints:
    """Therapist-tunable bounds on what the generator may produce."""

    forbid_repeat: bool = True
    max_step: int = 2
    spawn_interval_s: Optional[float] = None
    safe_lane_change_prob: float = 0.7

    def __post_init__(self):
        if self.max_step not in (1, 2):
            raise ValueError(f"max_step must be 1 or 2, got {self.max_step}")
        if not 0.0 <= self.safe_lane_change_prob <= 1.0:
            raise ValueError(f"safe_lane_change_prob out of [0,1]: {self.safe_lane_change_prob}")

    def to_dict(self) -> dict:
        return {
            "forbid_repeat": self.forbid_repeat,
            "max_step": self.max_step,
            "spawn_interval_s": self.spawn_interval_s,
            "safe_lane_change_prob": self.safe_lane_change_prob,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GeneratorConstraints":
        return cls(
            forbid_repeat=obj.get("forbid_repeat", True),
            max_step=obj.get("max_step", 2),
            spawn_interval_s=obj.get("spawn_interval_s"),
            safe_lane_change_prob=obj.get("safe_lane_change_prob", 0.7),
        )


def grid_candidates(constraints: GeneratorConstraints, previous: Optional[Cell]) -> list[Cell]:
    """Eligible next target cells, row-major."""
    if previous is None:
        return list(GRID_CELLS)
    pr, pc = previous
    out = []
    for cell in GRID_CELLS:
        if constraints.forbid_repeat and cell == previous:
            continue
        if max(abs(cell[0] - pr), abs(cell[1] - pc)) > constraints.max_step:
            continue
        out.append(cell)
    return out


def next_grid_target(
    rng: Prng, constraints: GeneratorConstraints, previous: Optional[Cell]
) -> Cell:
    """Uniform draw over the eligible cells."""
    candidates = grid_candidates(constraints, previous)
    if not candidates:
        raise EmptyCandidateSet(f"no eligible cell after {previous}")
    return candidates[rng.below(len(candidates))]


@dataclass(frozen=True)
class Wave:
    """One obstacle wave: a single safe lane, the other two blocked."""

    spawn_tick: int
    safe_lane: int
    blocked: tuple[int, int]


def next_wave(
    rng: Prng,
    constraints: GeneratorConstraints,
    previous_safe_lane: Optional[int],
    spawn_tick: int = 0,
) -> Wave:
    """Next wave; the safe lane moves with safe_lane_change_prob, else stays."""
    if previous_safe_lane is None:
        lane = rng.below(3)
    elif rng.chance(constraints.safe_lane_change_prob):
        others = [l for l in LANES if l != previous_safe_lane]
        lane = others[rng.below(2)]
    else:
        lane = previous_safe_lane
    blocked = tuple(l for l in LANES if l != lane)
    return Wave(spawn_tick=spawn_tick, safe_lane=lane, blocked=blocked)
