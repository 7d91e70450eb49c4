"""Skeleton frames and per-frame posture metrics.

Coordinates are meters in the sensor frame: x right, y up, z depth away
from the sensor. Every frame carries the full 25-joint tracked topology;
metrics are computed frame-by-frame with no temporal smoothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional


class DegenerateSegment(ValueError):
    """Two joints needed for a metric are numerically coincident."""


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValueError(f"non-finite coordinates: {self}")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def with_y(self, y: float) -> "Vec3":
        return Vec3(self.x, y, self.z)


class JointId(str, Enum):
    """The fixed 25-joint topology. Values are the serialization names."""

    SPINE_BASE = "spine_base"
    SPINE_MID = "spine_mid"
    SPINE_SHOULDER = "spine_shoulder"
    NECK = "neck"
    HEAD = "head"
    SHOULDER_L = "shoulder_l"
    SHOULDER_R = "shoulder_r"
    ELBOW_L = "elbow_l"
    ELBOW_R = "elbow_r"
    WRIST_L = "wrist_l"
    WRIST_R = "wrist_r"
    HAND_L = "hand_l"
    HAND_R = "hand_r"
    HAND_TIP_L = "hand_tip_l"
    HAND_TIP_R = "hand_tip_r"
    THUMB_L = "thumb_l"
    THUMB_R = "thumb_r"
    HIP_L = "hip_l"
    HIP_R = "hip_r"
    KNEE_L = "knee_l"
    KNEE_R = "knee_r"
    ANKLE_L = "ankle_l"
    ANKLE_R = "ankle_r"
    FOOT_L = "foot_l"
    FOOT_R = "foot_r"


ALL_JOINTS: tuple[JointId, ...] = tuple(JointId)

# Joints whose depth offset from the spine base is tracked for posture review.
DEPTH_JOINTS: tuple[JointId, ...] = (
    JointId.SHOULDER_L,
    JointId.SHOULDER_R,
    JointId.HIP_L,
    JointId.HIP_R,
    JointId.KNEE_L,
    JointId.KNEE_R,
    JointId.ANKLE_L,
    JointId.ANKLE_R,
)

_EPS_M = 1e-6


@dataclass(frozen=True)
class SkeletonFrame:
    """One tracked skeleton sample.

    t_ms is milliseconds since session start. All 25 joints must be
    present; confidences are per-joint in [0, 1].
    """

    t_ms: int
    joints: dict[JointId, Vec3]
    confidence: dict[JointId, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.t_ms < 0:
            raise ValueError(f"negative frame timestamp: {self.t_ms}")
        missing = [j for j in ALL_JOINTS if j not in self.joints]
        if missing:
            raise ValueError(f"frame missing joints: {[j.value for j in missing]}")
        if not self.confidence:
            object.__setattr__(self, "confidence", {j: 1.0 for j in ALL_JOINTS})
        for j, c in self.confidence.items():
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"confidence out of range for {j.value}: {c}")

    def at_time(self, t_ms: int) -> "SkeletonFrame":
        """The same pose re-stamped onto another clock."""
        return SkeletonFrame(t_ms=t_ms, joints=self.joints, confidence=self.confidence)


@dataclass(frozen=True)
class PostureMetrics:
    """Per-frame posture summary; a metric that could not be computed is None."""

    shoulder_tilt_deg: Optional[float]
    hip_tilt_deg: Optional[float]
    knee_l_deg: Optional[float]
    knee_r_deg: Optional[float]
    ankle_l_deg: Optional[float]
    ankle_r_deg: Optional[float]
    depth_offsets: dict[JointId, float]

    FLEXION_FIELDS = ("knee_l_deg", "knee_r_deg", "ankle_l_deg", "ankle_r_deg")

    @property
    def complete(self) -> bool:
        return None not in (
            self.shoulder_tilt_deg,
            self.hip_tilt_deg,
            self.knee_l_deg,
            self.knee_r_deg,
            self.ankle_l_deg,
            self.ankle_r_deg,
        )

    def to_dict(self) -> dict:
        return {
            "shoulder_tilt_deg": self.shoulder_tilt_deg,
            "hip_tilt_deg": self.hip_tilt_deg,
            "knee_l_deg": self.knee_l_deg,
            "knee_r_deg": self.knee_r_deg,
            "ankle_l_deg": self.ankle_l_deg,
            "ankle_r_deg": self.ankle_r_deg,
            "depth_offsets": {j.value: v for j, v in self.depth_offsets.items()},
        }


def joint_angle(frame: SkeletonFrame, a: JointId, vertex: JointId, c: JointId) -> float:
    """Interior angle at `vertex` between segments vertex->a and vertex->c, in degrees."""
    va = frame.joints[a] - frame.joints[vertex]
    vc = frame.joints[c] - frame.joints[vertex]
    na = va.norm()
    nc = vc.norm()
    if na < _EPS_M or nc < _EPS_M:
        raise DegenerateSegment(
            f"segments at {vertex.value} too short ({na:.2e} m, {nc:.2e} m)"
        )
    cosang = va.dot(vc) / (na * nc)
    cosang = max(-1.0, min(1.0, cosang))
    return math.degrees(math.acos(cosang))


def segment_tilt(frame: SkeletonFrame, left: JointId, right: JointId) -> float:
    """Signed angle of the left->right segment against the horizontal plane.

    Positive when the right joint is higher than the left one.
    """
    v = frame.joints[right] - frame.joints[left]
    n = v.norm()
    if n < _EPS_M:
        raise DegenerateSegment(f"{left.value}->{right.value} segment too short ({n:.2e} m)")
    s = max(-1.0, min(1.0, v.y / n))
    return math.degrees(math.asin(s))


def depth_offsets(frame: SkeletonFrame, joints: Iterable[JointId]) -> dict[JointId, float]:
    """Depth (z) of each requested joint relative to the spine base.

    Positive means farther from the sensor than the spine base.
    """
    base_z = frame.joints[JointId.SPINE_BASE].z
    return {j: frame.joints[j].z - base_z for j in joints}


def posture_metrics(frame: SkeletonFrame) -> PostureMetrics:
    """Full posture summary for one frame.

    A degenerate segment makes only the affected metric absent; the rest
    are still reported.
    """

    def angle(a, vertex, c):
        try:
            return joint_angle(frame, a, vertex, c)
        except DegenerateSegment:
            return None

    def tilt(left, right):
        try:
            return segment_tilt(frame, left, right)
        except DegenerateSegment:
            return None

    return PostureMetrics(
        shoulder_tilt_deg=tilt(JointId.SHOULDER_L, JointId.SHOULDER_R),
        hip_tilt_deg=tilt(JointId.HIP_L, JointId.HIP_R),
        knee_l_deg=angle(JointId.HIP_L, JointId.KNEE_L, JointId.ANKLE_L),
        knee_r_deg=angle(JointId.HIP_R, JointId.KNEE_R, JointId.ANKLE_R),
        ankle_l_deg=angle(JointId.KNEE_L, JointId.ANKLE_L, JointId.FOOT_L),
        ankle_r_deg=angle(JointId.KNEE_R, JointId.ANKLE_R, JointId.FOOT_R),
        depth_offsets=depth_offsets(frame, DEPTH_JOINTS),
    )
