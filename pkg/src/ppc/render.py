"""Pinhole depth rendering of triangle meshes and back-projection to point clouds.

Ray casting runs over a median-split AABB tree. Traversal is vectorized over
(ray, node) pairs breadth-first, so a whole image is cast in a few dozen
numpy passes rather than one Python loop per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    DEFAULT_TRANSLATION_RANGES,
    Frame,
    GeometryError,
    PointCloud,
    RigidPose,
    sample_pose,
)
from .mesh import TriangleMesh

BARY_SLACK = 1e-12
LEAF_SIZE = 4


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    fx: float = 256.0
    fy: float = 256.0
    cx: float = 128.0
    cy: float = 128.0
    width: int = 256
    height: int = 256

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized ray directions with unit z, row-major over ``(v, u)``."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(u.shape)], axis=-1)
        return d.reshape(-1, 3).astype(np.float64)


@dataclass(frozen=True)
class DepthImage:
    depth: np.ndarray  # (height, width) meters, 0 = no hit

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def write_pgm(self, path) -> None:
        """16-bit binary PGM, millimeter quantization."""
        mm = np.clip(np.rint(self.depth * 1000.0), 0, 65535).astype(">u2")
        header = f"P5\n{self.width} {self.height}\n65535\n".encode("ascii")
        Path(path).write_bytes(header + mm.tobytes())


def read_pgm(path) -> DepthImage:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if fields[0] != "P5":
        raise GeometryError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    arr = np.frombuffer(data[pos:pos + 2 * w * h], dtype=">u2").reshape(h, w)
    return DepthImage(arr.astype(np.float64) / 1000.0)


# ---------------------------------------------------------------------------
# Ray / triangle
# ---------------------------------------------------------------------------

def intersect_rays_triangles(origins, dirs, a, b, c) -> np.ndarray:
    """Möller–Trumbore over broadcast rows; returns ``t`` or ``inf`` on a miss.

    Edge and vertex hits count (barycentric bounds are inclusive with slack).
    """
    e1, e2 = b - a, c - a
    pvec = np.cross(dirs, e2)
    det = (e1 * pvec).sum(-1)
    scale = np.linalg.norm(e1, axis=-1) * np.linalg.norm(e2, axis=-1) * np.linalg.norm(dirs, axis=-1)
    ok = np.abs(det) > 1e-14 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        tvec = origins - a
        u = (tvec * pvec).sum(-1) * inv
        qvec = np.cross(tvec, e1)
        v = (dirs * qvec).sum(-1) * inv
        t = (e2 * qvec).sum(-1) * inv
        ok &= (u >= -BARY_SLACK) & (v >= -BARY_SLACK) & (u + v <= 1.0 + BARY_SLACK) & (t > 1e-12)
    return np.where(ok, t, np.inf)


def ray_triangle_intersect(origin, direction, tri) -> float | None:
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if not np.any(direction):
        raise GeometryError("zero ray direction")
    tri = np.asarray(tri, dtype=np.float64)
    t = float(intersect_rays_triangles(origin, direction, tri[0], tri[1], tri[2]))
    return None if np.isinf(t) else t


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bvh:
    box_min: np.ndarray     # (M, 3)
    box_max: np.ndarray     # (M, 3)
    left: np.ndarray        # (M,) child index or -1 for leaves
    right: np.ndarray
    start: np.ndarray       # leaf range into ``order``
    count: np.ndarray
    order: np.ndarray       # triangle indices grouped by leaf
    corners: np.ndarray     # (T, 3, 3) triangle corners

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0


def build_bvh(mesh: TriangleMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    corners = mesh.corners
    if len(corners) == 0:
        raise GeometryError("cannot build a BVH over an empty mesh")
    tmin, tmax = corners.min(axis=1), corners.max(axis=1)
    cent = corners.mean(axis=1)

    box_min, box_max, left, right, start, count = [], [], [], [], [], []
    order = np.arange(len(corners))

    def new_node(lo, hi):
        idx = order[lo:hi]
        box_min.append(tmin[idx].min(axis=0))
        box_max.append(tmax[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(lo)
        count.append(hi - lo)
        return len(left) - 1

    stack = [(new_node(0, len(order)), 0, len(order))]
    while stack:
        node, lo, hi = stack.pop()
        if hi - lo <= leaf_size:
            continue
        idx = order[lo:hi]
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (hi - lo) // 2
        # Stable sort keeps the split deterministic for ties.
        order[lo:hi] = idx[np.argsort(c[:, axis], kind="stable")]
        l_node = new_node(lo, lo + mid)
        r_node = new_node(lo + mid, hi)
        left[node], right[node] = l_node, r_node
        count[node] = 0
        stack.append((r_node, lo + mid, hi))
        stack.append((l_node, lo, lo + mid))

    pad = 1e-9 * max(1.0, float(np.abs(corners).max()))
    return Bvh(
        box_min=np.array(box_min) - pad,
        box_max=np.array(box_max) + pad,
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        order=order,
        corners=corners,
    )


def _slab(origins, inv_dirs, bmin, bmax):
    with np.errstate(invalid="ignore"):
        t0 = (bmin - origins) * inv_dirs
        t1 = (bmax - origins) * inv_dirs
    # 0 * inf gives nan for axis-parallel rays starting on a slab plane; treat as inside.
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    tnear = np.minimum(t0, t1).max(axis=1)
    tfar = np.maximum(t0, t1).min(axis=1)
    return tnear, tfar


def cast_rays(bvh: Bvh, origins, dirs, stats: dict | None = None):
    """Nearest hit for each ray: ``(t, triangle index)`` with ``inf``/-1 on a miss."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    n = len(dirs)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    tests = 0

    rays = np.arange(n)
    nodes = np.zeros(n, dtype=np.int64)
    while len(rays):
        tnear, tfar = _slab(origins[rays], inv[rays], bvh.box_min[nodes], bvh.box_max[nodes])
        hit = (tnear <= tfar) & (tfar > 0) & (tnear <= best_t[rays])
        rays, nodes = rays[hit], nodes[hit]

        leaf = bvh.left[nodes] < 0
        lr, ln = rays[leaf], nodes[leaf]
        if len(lr):
            cnt = bvh.count[ln]
            pr = np.repeat(lr, cnt)
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            tri = bvh.order[np.repeat(bvh.start[ln], cnt) + offs]
            c = bvh.corners[tri]
            t = intersect_rays_triangles(origins[pr], dirs[pr], c[:, 0], c[:, 1], c[:, 2])
            tests += len(tri)
            # Sort so ties on t resolve to the lowest triangle index.
            o = np.lexsort((tri, t))
            pr, t, tri = pr[o], t[o], tri[o]
            first = np.unique(pr, return_index=True)[1]
            pr, t, tri = pr[first], t[first], tri[first]
            better = (t < best_t[pr]) | ((t == best_t[pr]) & (tri < best_tri[pr]) & np.isfinite(t))
            best_t[pr[better]] = t[better]
            best_tri[pr[better]] = tri[better]

        ir, inn = rays[~leaf], nodes[~leaf]
        rays = np.concatenate([ir, ir])
        nodes = np.concatenate([bvh.left[inn], bvh.right[inn]])

    if stats is not None:
        stats["triangle_tests"] = stats.get("triangle_tests", 0) + tests
        stats["rays"] = stats.get("rays", 0) + n
    return best_t, best_tri


def cast_rays_brute_force(mesh: TriangleMesh, origins, dirs, chunk: int = 512):
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    c = mesh.corners
    best_t = np.full(len(dirs), np.inf)
    best_tri = np.full(len(dirs), -1, dtype=np.int64)
    for s in range(0, len(dirs), chunk):
        t = intersect_rays_triangles(origins[s:s + chunk, None], dirs[s:s + chunk, None],
                                     c[None, :, 0], c[None, :, 1], c[None, :, 2])
        best_tri[s:s + chunk] = np.where(np.isfinite(t.min(axis=1)), t.argmin(axis=1), -1)
        best_t[s:s + chunk] = t.min(axis=1)
    return best_t, best_tri


# ---------------------------------------------------------------------------
# Depth rendering
# ---------------------------------------------------------------------------

def render_depth(mesh: TriangleMesh, pose: RigidPose, cam: PinholeCamera,
                 bvh: Bvh | None = None) -> DepthImage:
    """Per-pixel nearest-hit z-depth of ``mesh`` placed at ``pose`` (camera looks down +z).

    A prebuilt ``bvh`` must be over the already-posed mesh.
    """
    posed = mesh.transformed(pose)
    if bvh is None:
        bvh = build_bvh(posed)
    dirs = cam.pixel_rays()
    rows = _screen_rect(posed.vertices, cam)
    # Directions have unit z, so the ray parameter is the z-depth.
    t, _ = cast_rays(bvh, np.zeros(3), dirs[rows])
    flat = np.zeros(cam.width * cam.height)
    flat[rows] = np.where(np.isfinite(t), t, 0.0)
    depth = flat.reshape(cam.height, cam.width)
    if not np.any(depth > 0):
        raise RenderError("no visible pixels for this pose")
    return DepthImage(depth)


def _screen_rect(vertices: np.ndarray, cam: PinholeCamera) -> np.ndarray:
    """Flat indices of pixels whose rays can reach the mesh's projected bounds."""
    all_px = np.arange(cam.width * cam.height)
    z = vertices[:, 2]
    if np.any(z <= 1e-9):
        if np.all(z <= 1e-9):
            return all_px[:0]
        return all_px
    u = cam.fx * vertices[:, 0] / z + cam.cx
    v = cam.fy * vertices[:, 1] / z + cam.cy
    u0, u1 = max(int(np.floor(u.min())) - 1, 0), min(int(np.ceil(u.max())) + 1, cam.width - 1)
    v0, v1 = max(int(np.floor(v.min())) - 1, 0), min(int(np.ceil(v.max())) + 1, cam.height - 1)
    if u0 > u1 or v0 > v1:
        return all_px[:0]
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    return (vv * cam.width + uu).ravel()


def backproject(depth: DepthImage, cam: PinholeCamera) -> PointCloud:
    d = depth.depth
    v, u = np.nonzero(d > 0)
    if len(v) == 0:
        raise RenderError("depth image has no valid pixels")
    z = d[v, u]
    pts = np.stack([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z], axis=1)
    return PointCloud(pts, Frame.CAMERA)


def render_partial_view(mesh: TriangleMesh, pose: RigidPose | None, cam: PinholeCamera, n: int,
                        rng: np.random.Generator, ranges=DEFAULT_TRANSLATION_RANGES,
                        max_attempts: int = 100) -> tuple[PointCloud, RigidPose]:
    """Render one view and subsample it to exactly ``n`` points.

    If ``pose`` is None, or a view yields fewer than ``n`` points, a fresh pose
    is drawn from ``rng``. Returns the cloud and the pose actually rendered.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    for _ in range(max_attempts):
        if pose is None:
            pose = sample_pose(rng, ranges)
        try:
            cloud = backproject(render_depth(mesh, pose, cam), cam)
        except RenderError:
            cloud = None
        if cloud is not None and len(cloud) >= n:
            keep = np.sort(rng.choice(len(cloud), size=n, replace=False))
            return cloud.with_points(cloud.points[keep]), pose
        pose = None
    raise RenderError(f"no view with >= {n} visible points after {max_attempts} attempts")
