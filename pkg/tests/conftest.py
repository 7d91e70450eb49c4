import random

import pytest

from pillowgrid.skeleton import ALL_JOINTS, JointId, SkeletonFrame, Vec3
from pillowgrid.sources import synth_skeleton


def frame_with(joints: dict, t_ms: int = 0) -> SkeletonFrame:
    """An upright synthetic frame with selected joints replaced outright."""
    base = synth_skeleton(0.0, 2.0, t_ms)
    merged = dict(base.joints)
    for j, p in joints.items():
        merged[j] = p if isinstance(p, Vec3) else Vec3(*p)
    return SkeletonFrame(t_ms=t_ms, joints=merged)


def random_frame(rng: random.Random, t_ms: int = 0, lo: float = -1.0, hi: float = 2.5) -> SkeletonFrame:
    joints = {j: Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)) for j in ALL_JOINTS}
    return SkeletonFrame(t_ms=t_ms, joints=joints)


def raised_hand_frame(t_ms: int, raised: bool = True) -> SkeletonFrame:
    offset = Vec3(0.0, 0.9, 0.0) if raised else Vec3(0.0, 0.0, 0.0)
    return frame_with({JointId.HAND_R: synth_skeleton(0, 2, 0).joints[JointId.HAND_R] + offset}, t_ms)


@pytest.fixture
def rng():
    return random.Random(20260810)
