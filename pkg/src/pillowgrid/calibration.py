"""Playground calibration: from three sampled standing positions to a grid frame.

The physical pillows are laid out either as a horizontal line of three or
as a 3x3 grid. The patient steps on three designated pillows; each sampled
floor position plus the designated cell index gives one calibration sample.
Three samples fully determine the affine cell layout on the floor plane
(x, z); y is ignored throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .skeleton import JointId, SkeletonFrame, Vec3

Cell = tuple[int, int]


class CalibrationError(ValueError):
    pass


class DuplicateCell(CalibrationError):
    pass


class UnexpectedCell(CalibrationError):
    pass


class CollinearSamples(CalibrationError):
    pass


class PitchTooSmall(CalibrationError):
    pass


class GridLayout(str, Enum):
    LINE3 = "line3"
    GRID3X3 = "grid3x3"


MIN_PITCH_M = 0.05
_COLLINEAR_EPS = 1e-4

# Which cells the patient is asked to step on, in prompt order.
CALIBRATION_CELLS: dict[GridLayout, tuple[Cell, ...]] = {
    GridLayout.GRID3X3: ((0, 0), (0, 2), (2, 0)),
    GridLayout.LINE3: ((0, 0), (0, 1), (0, 2)),
}


def layout_cells(layout: GridLayout) -> list[Cell]:
    """All valid cells of a layout in row-major order."""
    if layout is GridLayout.LINE3:
        return [(0, c) for c in range(3)]
    return [(r, c) for r in range(3) for c in range(3)]


@dataclass(frozen=True)
class CalibrationSample:
    designated_cell: Cell
    floor_point: Vec3
    captured_at_ms: int

    def __post_init__(self):
        if self.floor_point.y != 0.0:
            object.__setattr__(self, "floor_point", self.floor_point.with_y(0.0))


@dataclass(frozen=True)
class GridFrame:
    """Calibrated affine mapping between floor positions and logical cells.

    `origin` is the floor point of cell (0, 0); the basis vectors span one
    cell pitch along each axis. LINE3 has no row axis (basis_row is zero).
    """

    layout: GridLayout
    origin: Vec3
    basis_row: Vec3
    basis_col: Vec3
    tolerance_factor: float = 0.5

    def __post_init__(self):
        if self.col_pitch_m < MIN_PITCH_M:
            raise PitchTooSmall(f"column pitch {self.col_pitch_m:.3f} m")
        if self.layout is GridLayout.GRID3X3:
            if self.row_pitch_m < MIN_PITCH_M:
                raise PitchTooSmall(f"row pitch {self.row_pitch_m:.3f} m")
            cross = abs(self.basis_row.x * self.basis_col.z - self.basis_row.z * self.basis_col.x)
            if cross <= _COLLINEAR_EPS:
                raise CollinearSamples(f"grid axes nearly parallel (cross {cross:.2e})")
        if not 0.0 < self.tolerance_factor <= 0.5:
            raise CalibrationError(f"tolerance_factor out of (0, 0.5]: {self.tolerance_factor}")

    @property
    def row_pitch_m(self) -> float:
        return math.hypot(self.basis_row.x, self.basis_row.z)

    @property
    def col_pitch_m(self) -> float:
        return math.hypot(self.basis_col.x, self.basis_col.z)

    def cell_center(self, cell: Cell) -> Vec3:
        r, c = cell
        return self.origin + self.basis_row.scaled(r) + self.basis_col.scaled(c)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.value,
            "origin": [self.origin.x, self.origin.y, self.origin.z],
            "basis_row": [self.basis_row.x, self.basis_row.y, self.basis_row.z],
            "basis_col": [self.basis_col.x, self.basis_col.y, self.basis_col.z],
            "tolerance_factor": self.tolerance_factor,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GridFrame":
        return cls(
            layout=GridLayout(obj["layout"]),
            origin=Vec3(*obj["origin"]),
            basis_row=Vec3(*obj["basis_row"]),
            basis_col=Vec3(*obj["basis_col"]),
            tolerance_factor=obj.get("tolerance_factor", 0.5),
        )


def player_floor_point(frame: SkeletonFrame) -> Vec3:
    """Midpoint of the two ankles, projected onto the floor."""
    a = frame.joints[JointId.ANKLE_L]
    b = frame.joints[JointId.ANKLE_R]
    return Vec3((a.x + b.x) / 2.0, 0.0, (a.z + b.z) / 2.0)


def estimate_grid_frame(
    layout: GridLayout,
    samples: Iterable[CalibrationSample],
    tolerance_factor: float = 0.5,
) -> GridFrame:
    """Build the grid frame from the three designated calibration samples.

    GRID3X3 expects samples for cells (0,0), (0,2) and (2,0): the sampled
    corner triangle directly gives origin and both half-span bases. LINE3
    expects cells 0..2 and fits a least-squares line through the three
    points before measuring the pitch along it.
    """
    samples = list(samples)
    expected = set(CALIBRATION_CELLS[layout])
    designated = [s.designated_cell for s in samples]
    if len(set(designated)) != len(designated):
        raise DuplicateCell(f"duplicate designated cells: {designated}")
    if len(samples) != 3 or set(designated) != expected:
        raise UnexpectedCell(f"expected samples for {sorted(expected)}, got {sorted(designated)}")

    by_cell = {s.designated_cell: s.floor_point for s in samples}

    if layout is GridLayout.GRID3X3:
        p00 = by_cell[(0, 0)]
        p02 = by_cell[(0, 2)]
        p20 = by_cell[(2, 0)]
        vcol = p02 - p00
        vrow = p20 - p00
        cross = abs(vrow.x * vcol.z - vrow.z * vcol.x)
        if cross <= _COLLINEAR_EPS:
            raise CollinearSamples(f"samples collinear (cross {cross:.2e})")
        return GridFrame(
            layout=layout,
            origin=p00,
            basis_row=vrow.scaled(0.5).with_y(0.0),
            basis_col=vcol.scaled(0.5).with_y(0.0),
            tolerance_factor=tolerance_factor,
        )

    pts = [by_cell[(0, c)] for c in range(3)]
    mx = sum(p.x for p in pts) / 3.0
    mz = sum(p.z for p in pts) / 3.0
    sxx = sum((p.x - mx) ** 2 for p in pts)
    szz = sum((p.z - mz) ** 2 for p in pts)
    sxz = sum((p.x - mx) * (p.z - mz) for p in pts)
    # Principal axis of the 2D scatter = least-squares (total) line fit.
    theta = 0.5 * math.atan2(2.0 * sxz, sxx - szz)
    dx, dz = math.cos(theta), math.sin(theta)
    span = pts[2] - pts[0]
    if span.x * dx + span.z * dz < 0:
        dx, dz = -dx, -dz

    def project(p: Vec3) -> Vec3:
        t = (p.x - mx) * dx + (p.z - mz) * dz
        return Vec3(mx + t * dx, 0.0, mz + t * dz)

    origin = project(pts[0])
    end = project(pts[2])
    return GridFrame(
        layout=layout,
        origin=origin,
        basis_row=Vec3(0.0, 0.0, 0.0),
        basis_col=(end - origin).scaled(0.5),
        tolerance_factor=tolerance_factor,
    )


def _round_half_down(x: float) -> int:
    # Nearest integer; exact .5 ties go to the lower index.
    return math.ceil(x - 0.5)


def grid_coords(grid: GridFrame, point: Vec3) -> tuple[float, float]:
    """Continuous (row, col) coordinates of a floor point in the grid frame.

    For LINE3 the row coordinate is the off-line distance measured in
    column pitches, so the same tolerance applies across the line.
    """
    dx = point.x - grid.origin.x
    dz = point.z - grid.origin.z
    br, bc = grid.basis_row, grid.basis_col
    if grid.layout is GridLayout.GRID3X3:
        det = br.x * bc.z - bc.x * br.z
        u = (bc.z * dx - bc.x * dz) / det
        v = (br.x * dz - br.z * dx) / det
        return u, v
    pitch2 = bc.x * bc.x + bc.z * bc.z
    v = (dx * bc.x + dz * bc.z) / pitch2
    px = dx - v * bc.x
    pz = dz - v * bc.z
    u = math.hypot(px, pz) / math.sqrt(pitch2)
    return u, v


def locate_cell(grid: GridFrame, point: Vec3) -> Optional[Cell]:
    """Logical cell under a floor point, or None when outside every cell."""
    u, v = grid_coords(grid, point)
    r = _round_half_down(u)
    c = _round_half_down(v)
    rows = 1 if grid.layout is GridLayout.LINE3 else 3
    if not (0 <= r < rows and 0 <= c < 3):
        return None
    if abs(u - r) > grid.tolerance_factor or abs(v - c) > grid.tolerance_factor:
        return None
    return (r, c)


class HandRaiseDetector:
    """Fires once a hand stays above the head for the dwell time.

    Up to two consecutive non-qualifying frames are tolerated inside a
    qualifying run (tracking dropouts); a third resets the run.
    """

    MAX_DROPOUT_FRAMES = 2

    def __init__(self, height_margin_m: float = 0.10, dwell_s: float = 1.0):
        self.height_margin_m = height_margin_m
        self.dwell_s = dwell_s
        self._run_start_ms: Optional[int] = None
        self._dropouts = 0

    def reset(self) -> None:
        self._run_start_ms = None
        self._dropouts = 0

    def feed(self, frame: SkeletonFrame) -> Optional[int]:
        """Returns the confirmation timestamp when the dwell is met, else None."""
        head_y = frame.joints[JointId.HEAD].y
        hand_y = max(frame.joints[JointId.HAND_L].y, frame.joints[JointId.HAND_R].y)
        if hand_y > head_y + self.height_margin_m:
            self._dropouts = 0
            if self._run_start_ms is None:
                self._run_start_ms = frame.t_ms
            if frame.t_ms - self._run_start_ms >= self.dwell_s * 1000.0:
                self.reset()
                return frame.t_ms
        elif self._run_start_ms is not None:
            self._dropouts += 1
            if self._dropouts > self.MAX_DROPOUT_FRAMES:
                self.reset()
        return None


def detect_hand_raise(
    frames: Iterable[SkeletonFrame],
    height_margin_m: float = 0.10,
    dwell_s: float = 1.0,
) -> Optional[int]:
    """Scan a frame stream; returns the confirmation timestamp or None."""
    det = HandRaiseDetector(height_margin_m, dwell_s)
    for frame in frames:
        fired = det.feed(frame)
        if fired is not None:
            return fired
    return None


class CalibrationWizard:
    """Drives the three-position setup flow.

    For each designated cell in turn: frames are fed in, the hand-raise
    detector (or an explicit therapist confirmation) captures the sample,
    then the wizard waits for an acknowledgement before prompting the next
    position. After the third acknowledgement the grid frame is estimated;
    an estimation failure reports the error and restarts from the first
    position.
    """

    def __init__(self, layout: GridLayout, height_margin_m: float = 0.10, dwell_s: float = 1.0):
        self.layout = layout
        self.samples: list[CalibrationSample] = []
        self.grid: Optional[GridFrame] = None
        self.error: Optional[str] = None
        self.awaiting_ack = False
        self._detector = HandRaiseDetector(height_margin_m, dwell_s)
        self._last_frame: Optional[SkeletonFrame] = None

    @property
    def complete(self) -> bool:
        return self.grid is not None

    @property
    def current_cell(self) -> Optional[Cell]:
        order = CALIBRATION_CELLS[self.layout]
        if self.complete or len(self.samples) >= len(order):
            return None
        return order[len(self.samples)]

    def feed(self, frame: SkeletonFrame) -> bool:
        """Feed one frame; returns True when this frame captured a sample."""
        if self.complete or self.awaiting_ack:
            return False
        self._last_frame = frame
        fired = self._detector.feed(frame)
        if fired is None:
            return False
        self._capture(frame, fired)
        return True

    def confirm(self) -> bool:
        """Therapist-side manual confirmation of the current position."""
        if self.complete or self.awaiting_ack or self._last_frame is None:
            return False
        self._capture(self._last_frame, self._last_frame.t_ms)
        return True

    def ack(self) -> None:
        """Acknowledge the captured sample; advances or finishes the flow."""
        if not self.awaiting_ack:
            return
        self.awaiting_ack = False
        if len(self.samples) < len(CALIBRATION_CELLS[self.layout]):
            return
        try:
            self.grid = estimate_grid_frame(self.layout, self.samples)
            self.error = None
        except CalibrationError as exc:
            self.error = str(exc)
            self.samples.clear()
            self._detector.reset()

    def _capture(self, frame: SkeletonFrame, t_ms: int) -> None:
        cell = self.current_cell
        assert cell is not None
        self.samples.append(
            CalibrationSample(
                designated_cell=cell,
                floor_point=player_floor_point(frame),
                captured_at_ms=t_ms,
            )
        )
        self._detector.reset()
        self.awaiting_ack = True

    def progress(self) -> dict:
        return {
            "layout": self.layout.value,
            "samples_captured": len(self.samples),
            "current_cell": list(self.current_cell) if self.current_cell else None,
            "awaiting_ack": self.awaiting_ack,
            "complete": self.complete,
            "error": self.error,
        }


def default_grid(layout: GridLayout, pitch_m: float = 0.5, z0: float = 1.5) -> GridFrame:
    """Axis-aligned grid frame used for headless simulation and demo mode."""
    if layout is GridLayout.LINE3:
        return GridFrame(
            layout=layout,
            origin=Vec3(-pitch_m, 0.0, z0 + pitch_m),
            basis_row=Vec3(0.0, 0.0, 0.0),
            basis_col=Vec3(pitch_m, 0.0, 0.0),
        )
    return GridFrame(
        layout=layout,
        origin=Vec3(-pitch_m, 0.0, z0),
        basis_row=Vec3(0.0, 0.0, pitch_m),
        basis_col=Vec3(pitch_m, 0.0, 0.0),
    )
