"""3D convex hull by quickhull.

Floating-point predicates with a tolerance of ``1e-9 * diameter``: points within
the tolerance of a face plane count as on the hull surface, not outside it, so
coplanar non-extreme points never become vertices. Ties between equally far
points go to the lowest input index, which keeps face order reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError

REL_EPS = 1e-9


class DegenerateHullError(GeometryError):
    pass


@dataclass(frozen=True)
class ConvexHull3:
    points: np.ndarray     # (N, 3) input points
    vertices: np.ndarray   # sorted indices into ``points``
    faces: np.ndarray      # (F, 3) outward-wound index triples

    def face_planes(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.points[self.faces]
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return n, (n * c[:, 0]).sum(axis=1)

    def signed_distances(self, pts) -> np.ndarray:
        """``(len(pts), F)`` signed distances; positive means outside a face."""
        n, off = self.face_planes()
        return np.asarray(pts) @ n.T - off


class _Face:
    __slots__ = ("verts", "normal", "offset", "outside", "alive")

    def __init__(self, verts, pts):
        a, b, c = (pts[i] for i in verts)
        n = np.cross(b - a, c - a)
        self.verts = verts
        self.normal = n / np.linalg.norm(n)
        self.offset = float(self.normal @ a)
        self.outside = np.zeros(0, dtype=np.int64)
        self.alive = True


def _initial_simplex(pts: np.ndarray, eps: float) -> list[int]:
    ext = np.concatenate([pts.argmin(axis=0), pts.argmax(axis=0)])
    best, pair = -1.0, None
    for i in range(len(ext)):
        for j in range(i + 1, len(ext)):
            d = np.linalg.norm(pts[ext[i]] - pts[ext[j]])
            if d > best + eps:
                best, pair = d, (int(ext[i]), int(ext[j]))
    if best <= eps:
        raise DegenerateHullError("all points coincide")
    a, b = pair
    ab = pts[b] - pts[a]
    d_line = np.linalg.norm(np.cross(pts - pts[a], ab), axis=1) / np.linalg.norm(ab)
    c = int(np.argmax(d_line))
    if d_line[c] <= eps:
        raise DegenerateHullError("points are collinear")
    n = np.cross(ab, pts[c] - pts[a])
    n /= np.linalg.norm(n)
    d_plane = np.abs((pts - pts[a]) @ n)
    d = int(np.argmax(d_plane))
    if d_plane[d] <= eps:
        raise DegenerateHullError("points are coplanar")
    return [a, b, c, d]


def convex_hull_3d(points) -> ConvexHull3:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DegenerateHullError("need at least 4 points in 3D")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite point")
    diameter = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    eps = REL_EPS * max(diameter, 1e-300)

    a, b, c, d = _initial_simplex(pts, eps)
    faces: list[_Face] = []
    edge_face: dict[tuple[int, int], int] = {}

    def add_face(verts) -> int:
        f = _Face(verts, pts)
        faces.append(f)
        fid = len(faces) - 1
        for k in range(3):
            edge_face[(verts[k], verts[(k + 1) % 3])] = fid
        return fid

    # Orient the simplex so face normals point away from d.
    if (np.cross(pts[b] - pts[a], pts[c] - pts[a]) @ (pts[d] - pts[a])) > 0:
        b, c = c, b
    new_ids = [add_face((a, b, c)), add_face((a, d, b)), add_face((b, d, c)), add_face((c, d, a))]

    def assign(cands: np.ndarray, fids: list[int]):
        if len(cands) == 0:
            return
        normals = np.array([faces[f].normal for f in fids])
        offsets = np.array([faces[f].offset for f in fids])
        dist = pts[cands] @ normals.T - offsets
        best = dist.argmax(axis=1)
        keep = dist[np.arange(len(cands)), best] > eps
        for k, fid in enumerate(fids):
            sel = cands[keep & (best == k)]
            if len(sel):
                faces[fid].outside = sel

    rest = np.setdiff1d(np.arange(len(pts)), [a, b, c, d])
    assign(rest, new_ids)

    pending = list(new_ids)
    while pending:
        fid = pending.pop()
        face = faces[fid]
        if not face.alive or len(face.outside) == 0:
            continue
        out = face.outside
        dist = pts[out] @ face.normal - face.offset
        # argmax returns the first maximum; ``out`` is sorted, so ties go to the lowest index.
        eye = int(out[int(np.argmax(dist))])
        ep = pts[eye]

        visible, seen, stack = [], {fid}, [fid]
        while stack:
            f = stack.pop()
            visible.append(f)
            va = faces[f].verts
            for k in range(3):
                nb = edge_face[(va[(k + 1) % 3], va[k])]
                if nb not in seen and (faces[nb].normal @ ep - faces[nb].offset) > eps:
                    seen.add(nb)
                    stack.append(nb)

        horizon = []
        for f in visible:
            va = faces[f].verts
            for k in range(3):
                e = (va[k], va[(k + 1) % 3])
                if edge_face[(e[1], e[0])] not in seen:
                    horizon.append(e)

        orphans = np.concatenate([faces[f].outside for f in visible])
        for f in visible:
            faces[f].alive = False
            faces[f].outside = np.zeros(0, dtype=np.int64)
            va = faces[f].verts
            for k in range(3):
                e = (va[k], va[(k + 1) % 3])
                if edge_face.get(e) == f:
                    del edge_face[e]

        created = [add_face((e[0], e[1], eye)) for e in horizon]
        orphans = np.sort(orphans[orphans != eye])
        assign(orphans, created)
        pending.extend(reversed(created))

    live = np.array([f.verts for f in faces if f.alive], dtype=np.int64)
    return ConvexHull3(points=pts, vertices=np.unique(live), faces=live)
