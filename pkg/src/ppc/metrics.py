"""Pose losses, symmetry reduction and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    GeometryError,
    RigidPose,
    quat_angle,
    quat_canonical,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
)

NONE, DISCRETE, CONTINUOUS = "none", "discrete", "continuous"
_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class SymmetrySpec:
    kind: str = NONE
    axis: tuple = (0.0, 0.0, 1.0)
    order: int = 1

    def __post_init__(self):
        if self.kind not in (NONE, DISCRETE, CONTINUOUS):
            raise GeometryError(f"unknown symmetry kind {self.kind!r}")
        axis = tuple(float(a) for a in self.axis)
        if len(axis) != 3 or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise GeometryError(f"symmetry axis must be unit-norm, got {axis}")
        object.__setattr__(self, "axis", axis)
        if self.kind == DISCRETE and self.order < 2:
            raise GeometryError("discrete symmetry order must be >= 2")

    @classmethod
    def discrete(cls, axis, order: int) -> "SymmetrySpec":
        return cls(DISCRETE, tuple(axis), int(order))

    @classmethod
    def continuous(cls, axis) -> "SymmetrySpec":
        return cls(CONTINUOUS, tuple(axis))

    def spec_id(self) -> str:
        """Compact id used in manifests: ``none``, ``discrete:z:4``, ``continuous:z``."""
        if self.kind == NONE:
            return NONE
        name = next((k for k, v in _AXES.items() if v == self.axis), ",".join(repr(a) for a in self.axis))
        return f"{DISCRETE}:{name}:{self.order}" if self.kind == DISCRETE else f"{CONTINUOUS}:{name}"

    @classmethod
    def from_id(cls, text: str) -> "SymmetrySpec":
        parts = text.split(":")
        if parts[0] == NONE:
            return cls()
        axis = _AXES.get(parts[1]) or tuple(float(a) for a in parts[1].split(","))
        if parts[0] == DISCRETE:
            return cls.discrete(axis, int(parts[2]))
        if parts[0] == CONTINUOUS:
            return cls.continuous(axis)
        raise GeometryError(f"bad symmetry id {text!r}")

    def group_elements(self, n_continuous: int = 36) -> list[np.ndarray]:
        """Quaternions of the symmetry group (sampled for continuous symmetries)."""
        if self.kind == NONE:
            return [np.array([1.0, 0.0, 0.0, 0.0])]
        n = self.order if self.kind == DISCRETE else n_continuous
        return [quat_from_axis_angle(self.axis, 2 * np.pi * k / n) for k in range(n)]

    def random_element(self, rng: np.random.Generator) -> np.ndarray:
        if self.kind == NONE:
            return np.array([1.0, 0.0, 0.0, 0.0])
        if self.kind == DISCRETE:
            return quat_from_axis_angle(self.axis, 2 * np.pi * int(rng.integers(self.order)) / self.order)
        return quat_from_axis_angle(self.axis, rng.uniform(0, 2 * np.pi))


@dataclass(frozen=True)
class PoseError:
    rot_deg: float
    trans: float


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def loss_reg(q, t, q_hat, t_hat, alpha: float = 10.0, double_cover: bool = True) -> float:
    """Quaternion L2 plus weighted translation L2.

    With ``double_cover`` the rotation term is ``min(|q - q̂|, |q + q̂|)`` so that
    ``q`` and ``-q`` score identically; without it the raw difference is used.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    q, q_hat = np.asarray(q, float), np.asarray(q_hat, float)
    rot = np.linalg.norm(q - q_hat)
    if double_cover:
        rot = min(rot, np.linalg.norm(q + q_hat))
    return float(rot + alpha * np.linalg.norm(np.asarray(t, float) - np.asarray(t_hat, float)))


def loss_geo(q, q_hat) -> float:
    """Geodesic angle (radians) between two rotations; sign-invariant."""
    d = float(np.dot(q, q_hat))
    return float(np.arccos(np.clip(2.0 * d * d - 1.0, -1.0, 1.0)))


def loss_pm(q, t, q_hat, t_hat, model_points) -> float:
    """Mean distance between model points under the two poses."""
    x = np.asarray(model_points, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("model_points must be a non-empty (M, 3) array")
    a = x @ quat_to_matrix(q).T + np.asarray(t, float)
    b = x @ quat_to_matrix(q_hat).T + np.asarray(t_hat, float)
    return float(np.linalg.norm(a - b, axis=1).mean())


def loss_total(l_pos: float, l_cls: float, lam: float = 10.0) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return l_pos + lam * l_cls


# ---------------------------------------------------------------------------
# Symmetry
# ---------------------------------------------------------------------------

def symmetry_canonicalize(q, spec: SymmetrySpec) -> np.ndarray:
    """Pick the representative ``q·g`` of ``q``'s symmetry class nearest the identity.

    Discrete: minimize over the ``n`` rotations about the axis (ties go to the
    smallest multiple). Continuous: strip the twist about the axis, leaving the
    swing, which is the minimal-angle element of the coset.
    """
    if not isinstance(spec, SymmetrySpec):
        raise GeometryError(f"invalid symmetry spec {spec!r}")
    q = quat_normalize(q)
    if spec.kind == DISCRETE:
        best, best_angle = q, np.inf
        for g in spec.group_elements():
            cand = quat_multiply(q, g)
            ang = quat_angle(cand)
            if ang < best_angle - 1e-12:
                best, best_angle = cand, ang
        q = best
    elif spec.kind == CONTINUOUS:
        a = np.asarray(spec.axis)
        proj = float(np.dot(q[1:], a))
        twist = np.concatenate([[q[0]], proj * a])
        norm = np.linalg.norm(twist)
        # 180° swings have an undefined twist; any representative is minimal.
        if norm > 1e-12:
            q = quat_multiply(q, quat_conjugate(twist / norm))
            # The swing has no component along the axis; remove rounding residue.
            q[1:] -= np.dot(q[1:], a) * a
            q = quat_normalize(q)
    return quat_canonical(q)


def pose_error(gt: RigidPose, pred: RigidPose, spec: SymmetrySpec | None = None) -> PoseError:
    """Rotation error modulo the symmetry group, and translation error.

    The relative rotation ``gt⁻¹·pred`` is symmetry-canonicalized; its angle is
    the minimum geodesic distance between ``pred`` and any ``gt·g``.
    """
    rel = quat_multiply(quat_conjugate(gt.rotation), pred.rotation)
    if spec is not None:
        rel = symmetry_canonicalize(rel, spec)
    rot = float(np.degrees(quat_angle(rel)))
    return PoseError(rot_deg=min(max(rot, 0.0), 180.0),
                     trans=float(np.linalg.norm(gt.translation - pred.translation)))


def pose_accuracy(errors, rot_thresh: float = 10.0, trans_thresh: float = 0.10) -> float:
    errors = list(errors)
    if not errors:
        raise ValueError("no pose errors to score")
    ok = sum(1 for e in errors if e.rot_deg < rot_thresh and e.trans < trans_thresh)
    return ok / len(errors)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def confusion_matrix(preds, labels, k: int) -> np.ndarray:
    preds, labels = np.asarray(preds, dtype=np.int64), np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    for name, arr in (("label", labels), ("prediction", preds)):
        if len(arr) and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} out of range [0, {k})")
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (labels, preds), 1)
    return m


def classification_accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples")
    return float((preds == labels).mean())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("method", "split", "metric", "value")


def write_report_csv(rows, path) -> None:
    """Rows are ``(method, split, metric, value)`` tuples or dicts."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in rows:
            if isinstance(r, dict):
                r = tuple(r[f] for f in REPORT_FIELDS)
            w.writerow([r[0], r[1], r[2], repr(float(r[3]))])


def read_report_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [dict(r, value=float(r["value"])) for r in csv.DictReader(fh)]
