"""Rigid-body algebra, sampling and point-cloud primitives.

Quaternions are stored as ``(w, x, y, z)`` float64 arrays. Rotations act on
column vectors, ``p' = R p + t``; point clouds are ``(N, 3)`` arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TRANSLATION_RANGES = ((-2.0, 2.0), (-2.0, 2.0), (2.0, 5.0))


class GeometryError(ValueError):
    pass


class Frame(enum.Enum):
    CAMERA = "camera"
    NORMALIZED = "normalized"
    CANONICAL = "canonical"


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise GeometryError(f"non-finite quaternion {q}")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise GeometryError("zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Flip ``q`` into the ``w >= 0`` hemisphere (ties broken on x, y, z)."""
    q = np.array(q, dtype=np.float64)
    for c in q:
        if c > 0:
            return q
        if c < 0:
            return -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    h = 0.5 * angle
    return np.concatenate([[np.cos(h)], np.sin(h) * axis])


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise GeometryError(f"non-finite quaternion {q}")
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    """Shepperd's method; result is unit-norm and in the ``w >= 0`` hemisphere."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise GeometryError("non-finite matrix")
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    diag = (tr, m[0, 0], m[1, 1], m[2, 2])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(quat_normalize(q))


def quat_angle(q) -> float:
    """Rotation angle of ``q`` in radians, in [0, pi]."""
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * float(np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


# ---------------------------------------------------------------------------
# Rigid poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidPose:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("non-finite translation")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix4(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.matrix
        m[:3, 3] = self.translation
        return m

    def canonical(self) -> "RigidPose":
        return RigidPose(quat_canonical(self.rotation), self.translation)

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    __hash__ = None


def pose_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Return ``a ∘ b``: apply ``b`` first, then ``a``."""
    return RigidPose(
        quat_multiply(a.rotation, b.rotation),
        a.matrix @ b.translation + a.translation,
    )


def pose_inverse(pose: RigidPose) -> RigidPose:
    qi = quat_conjugate(pose.rotation)
    return RigidPose(qi, -(quat_to_matrix(qi) @ pose.translation))


def transform_points(pose: RigidPose, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ pose.matrix.T + pose.translation


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: Frame = Frame.CAMERA

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"expected (N, 3) points, got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def with_points(self, points, frame: Frame | None = None) -> "PointCloud":
        return PointCloud(points, self.frame if frame is None else frame)


def pose_apply(pose: RigidPose, cloud: PointCloud, frame: Frame | None = None) -> PointCloud:
    if len(cloud) == 0:
        raise GeometryError("empty cloud")
    return cloud.with_points(transform_points(pose, cloud.points), frame)


def normalize_unit_sphere(cloud: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center on the centroid and scale so the farthest point has norm 1.

    Returns the normalized cloud with the ``(centroid, scale)`` needed to invert.
    """
    pts = cloud.points
    if len(pts) == 0:
        raise GeometryError("empty cloud")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.sqrt((centered * centered).sum(axis=1).max()))
    if not scale > 0.0:
        raise GeometryError("degenerate cloud: all points coincide")
    out = centered / scale
    return PointCloud(out, Frame.NORMALIZED), centroid, scale


def denormalize(points, centroid, scale: float) -> np.ndarray:
    return np.asarray(points) * scale + centroid


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_uniform_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation via Shoemake's subgroup algorithm."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    x, y = a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2)
    z, w = b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)
    return quat_normalize([w, x, y, z])


def sample_translation(rng: np.random.Generator, ranges=DEFAULT_TRANSLATION_RANGES) -> np.ndarray:
    ranges = np.asarray(ranges, dtype=np.float64)
    if ranges.shape != (3, 2) or not np.all(np.isfinite(ranges)):
        raise GeometryError(f"translation ranges must be 3 (lo, hi) pairs, got {ranges.tolist()}")
    lo, hi = ranges[:, 0], ranges[:, 1]
    if np.any(lo > hi):
        raise GeometryError(f"invalid translation range {ranges.tolist()}")
    u = rng.random(3)
    return np.where(lo == hi, lo, lo + u * (hi - lo))


def sample_pose(rng: np.random.Generator, ranges=DEFAULT_TRANSLATION_RANGES) -> RigidPose:
    q = sample_uniform_rotation(rng)
    return RigidPose(q, sample_translation(rng, ranges))


def farthest_point_sample(cloud: PointCloud, m: int) -> PointCloud:
    return cloud.with_points(cloud.points[farthest_point_indices(cloud.points, m)])


def farthest_point_indices(points, m: int) -> np.ndarray:
    """Greedy max-min selection seeded at index 0."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if m > n:
        raise GeometryError(f"cannot pick {m} points from {n}")
    if m <= 0:
        return np.zeros(0, dtype=np.int64)
    idx = np.empty(m, dtype=np.int64)
    idx[0] = 0
    dist = ((pts - pts[0]) ** 2).sum(axis=1)
    dist[0] = -np.inf  # selected points never win again, even among duplicates
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        idx[i] = nxt
        dist = np.minimum(dist, ((pts - pts[nxt]) ** 2).sum(axis=1))
        dist[nxt] = -np.inf
    return idx
