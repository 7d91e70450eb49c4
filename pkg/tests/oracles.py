"""Independent numpy recomputations used to cross-check the geometry code.

These deliberately do not call into pillowgrid's math: they are the other
side of every dual-route check in the tests.
"""

import numpy as np

from pillowgrid.skeleton import JointId, SkeletonFrame, Vec3


def as_np(v: Vec3) -> np.ndarray:
    return np.array([v.x, v.y, v.z], dtype=float)


def angle_oracle(frame: SkeletonFrame, a: JointId, vertex: JointId, c: JointId) -> float:
    va = as_np(frame.joints[a]) - as_np(frame.joints[vertex])
    vc = as_np(frame.joints[c]) - as_np(frame.joints[vertex])
    cosang = np.dot(va, vc) / (np.linalg.norm(va) * np.linalg.norm(vc))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))


def tilt_oracle(frame: SkeletonFrame, left: JointId, right: JointId) -> float:
    v = as_np(frame.joints[right]) - as_np(frame.joints[left])
    return float(np.degrees(np.arcsin(np.clip(v[1] / np.linalg.norm(v), -1.0, 1.0))))


def depth_oracle(frame: SkeletonFrame, joints) -> dict:
    base = frame.joints[JointId.SPINE_BASE].z
    return {j: frame.joints[j].z - base for j in joints}


def random_rotation(rng) -> np.ndarray:
    """Uniform random rotation matrix from a random unit quaternion."""
    q = np.array([rng.gauss(0, 1) for _ in range(4)])
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rigid_transform_frame(frame: SkeletonFrame, R: np.ndarray, t: np.ndarray) -> SkeletonFrame:
    joints = {}
    for j, v in frame.joints.items():
        p = R @ as_np(v) + t
        joints[j] = Vec3(float(p[0]), float(p[1]), float(p[2]))
    return SkeletonFrame(t_ms=frame.t_ms, joints=joints, confidence=frame.confidence)
