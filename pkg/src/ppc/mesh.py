"""Triangle meshes: validation, OFF/OBJ I/O, area-weighted sampling, distances."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Frame, GeometryError, PointCloud, RigidPose, transform_points

MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise GeometryError("non-finite mesh vertex")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> np.ndarray:
        """``(T, 3, 3)`` array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def validate(self) -> "TriangleMesh":
        if len(self.triangles) == 0:
            raise GeometryError("mesh has no triangles")
        bad = np.flatnonzero(self.areas() <= MIN_TRIANGLE_AREA)
        if len(bad):
            raise GeometryError(f"{len(bad)} degenerate triangles (first: {bad[0]})")
        return self

    def transformed(self, pose: RigidPose) -> "TriangleMesh":
        return TriangleMesh(transform_points(pose, self.vertices), self.triangles)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        return len(used) - len(self.edges()) + len(self.triangles)

    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def is_watertight(self) -> bool:
        """Every directed edge is matched by exactly one opposite edge."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        fwd = {tuple(e) for e in directed.tolist()}
        if len(fwd) != len(directed):
            return False
        return all((b, a) in fwd for a, b in fwd)


def mesh_surface_sample(mesh: TriangleMesh, n: int, rng: np.random.Generator,
                        frame: Frame = Frame.CANONICAL) -> PointCloud:
    if n < 1:
        raise GeometryError("n must be >= 1")
    areas = mesh.areas()
    total = areas.sum()
    if not total > MIN_TRIANGLE_AREA:
        raise GeometryError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    c = mesh.corners[tri]
    pts = c[:, 0] + u[:, None] * (c[:, 1] - c[:, 0]) + v[:, None] * (c[:, 2] - c[:, 0])
    return PointCloud(pts, frame)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle ``abc`` to ``p`` (Ericson's region test), broadcast over rows."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[..., None] + ac * w[..., None]

        # Edge regions, then vertex regions; later assignments win.
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        out = np.where(m[..., None], a + ab * t[..., None], out)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        out = np.where(m[..., None], a + ac * t[..., None], out)
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out = np.where(m[..., None], b + (c - b) * t[..., None], out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
    return out


def point_mesh_distance_brute_force(points, mesh: TriangleMesh, chunk: int = 256) -> np.ndarray:
    """Unsigned distance from each point to the nearest triangle, testing every triangle."""
    pts = np.asarray(points, dtype=np.float64)
    corners = mesh.corners
    a, b, c = corners[None, :, 0], corners[None, :, 1], corners[None, :, 2]
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        q = closest_points_on_triangles(p, a, b, c)
        out[s:s + chunk] = np.sqrt(((q - p) ** 2).sum(-1)).min(axis=1)
    return out


def point_mesh_distance(points, mesh: TriangleMesh, chunk: int = 512) -> np.ndarray:
    """Unsigned distance from each point to the nearest triangle.

    Exact: a triangle is skipped only when its bounding box is farther than the
    nearest mesh vertex, which bounds the answer from above.
    """
    pts = np.asarray(points, dtype=np.float64)
    corners = mesh.corners
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        gap = np.maximum(np.maximum(lo[None] - p[:, None], p[:, None] - hi[None]), 0.0)
        box2 = (gap ** 2).sum(-1)
        upper2 = ((p[:, None] - mesh.vertices[None]) ** 2).sum(-1).min(axis=1)
        ii, jj = np.nonzero(box2 <= upper2[:, None] * (1 + 1e-9) + 1e-300)
        q = closest_points_on_triangles(p[ii], corners[jj, 0], corners[jj, 1], corners[jj, 2])
        d = np.sqrt(((q - p[ii]) ** 2).sum(-1))
        best = np.full(len(p), np.inf)
        np.minimum.at(best, ii, d)
        out[s:s + chunk] = best
    return out


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _fan(face: list[int]) -> list[list[int]]:
    return [[face[0], face[i], face[i + 1]] for i in range(1, len(face) - 1)]


def load_off(path) -> TriangleMesh:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.append(line)
    if not tokens:
        raise GeometryError(f"{path}: empty OFF file")
    head = tokens[0]
    # Some ModelNet files glue the counts onto the header ("OFF490 518 0").
    if head.startswith("OFF"):
        rest = head[3:].strip()
        tokens = ([rest] if rest else []) + tokens[1:]
    nv, nf = (int(x) for x in tokens[0].split()[:2])
    verts = [[float(x) for x in tokens[1 + i].split()[:3]] for i in range(nv)]
    tris: list[list[int]] = []
    for i in range(nf):
        vals = [int(x) for x in tokens[1 + nv + i].split()]
        tris.extend(_fan(vals[1:1 + vals[0]]))
    return TriangleMesh(np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_obj(path) -> TriangleMesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for p in parts[1:]:
                i = int(p.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            tris.extend(_fan(idx))
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_mesh(path) -> TriangleMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return load_off(path)
    if suffix == ".obj":
        return load_obj(path)
    raise GeometryError(f"unsupported mesh format: {suffix}")


def _write_lines(path, lines):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def save_off(mesh: TriangleMesh, path) -> None:
    lines = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    lines += [" ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in mesh.triangles]
    _write_lines(path, lines)


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = ["v " + " ".join(repr(float(x)) for x in v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in t) for t in mesh.triangles]
    _write_lines(path, lines)
