"""Dataset assembly, on-disk formats and alignment targets.

Layout under ``out``::

    manifest.jsonl           header line, one line per instance, one per sample
    meshes/i00012.off        canonical instance meshes
    models/i00012.ppc        FPS-selected canonical model points (point matching loss)
    samples/train/i00012_v03.ppc

``.ppc`` files: magic ``PPC1``, ``u32`` point count, then ``n x 3`` float32
little-endian coordinates.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    DEFAULT_TRANSLATION_RANGES,
    Frame,
    GeometryError,
    PointCloud,
    RigidPose,
    farthest_point_indices,
    normalize_unit_sphere,
    quat_canonical,
    quat_conjugate,
    quat_to_matrix,
    transform_points,
)
from .mesh import TriangleMesh, load_mesh, mesh_surface_sample, point_mesh_distance, save_off
from .metrics import SymmetrySpec
from .render import PinholeCamera, render_partial_view
from .shapes import ShapeSpec, corpus, generate_instance, normalize_mesh

log = logging.getLogger(__name__)

PPC_MAGIC = b"PPC1"
MANIFEST = "manifest.jsonl"
MANIFEST_VERSION = 1
SURFACE_TOL = 1e-6


class DatasetError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Point files
# ---------------------------------------------------------------------------

def write_ppc(path, points) -> None:
    pts = np.asarray(points, dtype="<f4").reshape(-1, 3)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(PPC_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes())


def read_ppc(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != PPC_MAGIC:
        raise DatasetError(f"{path}: not a PPC1 point file")
    (n,) = struct.unpack_from("<I", data, 4)
    pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=8)
    return pts.reshape(n, 3).astype(np.float64)


def read_cloud(path) -> np.ndarray:
    """Read ``.ppc`` or whitespace-separated text (first three columns)."""
    path = Path(path)
    if path.suffix == ".ppc":
        return read_ppc(path)
    return np.atleast_2d(np.loadtxt(path))[:, :3].astype(np.float64)


def write_cloud(path, points) -> None:
    path = Path(path)
    if path.suffix == ".ppc":
        write_ppc(path, points)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.asarray(points), fmt="%.9g")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass
class SampleRecord:
    instance_id: int
    class_id: int
    view_id: int
    split: str
    pose: RigidPose            # camera-from-canonical
    centroid: np.ndarray
    scale: float
    symmetry: str
    file: str
    points: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "kind": "sample",
            "split": self.split,
            "instance_id": self.instance_id,
            "class_id": self.class_id,
            "view_id": self.view_id,
            "q": [float(x) for x in self.pose.rotation],
            "t": [float(x) for x in self.pose.translation],
            "centroid": [float(x) for x in self.centroid],
            "scale": float(self.scale),
            "symmetry": self.symmetry,
            "file": self.file,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SampleRecord":
        return cls(d["instance_id"], d["class_id"], d["view_id"], d["split"],
                   RigidPose(np.array(d["q"]), np.array(d["t"])),
                   np.array(d["centroid"]), float(d["scale"]), d["symmetry"], d["file"])


def derive_alignment_target(pose: RigidPose, centroid, scale: float) -> RigidPose:
    """Pose mapping normalized camera points onto canonical coordinates / scale.

    For camera points ``p = R x + t``: ``R^T ((p - c) / s) + R^T (c - t) / s = x / s``.
    """
    if not scale > 0:
        raise GeometryError("normalization scale must be positive")
    q_inv = quat_canonical(quat_conjugate(pose.rotation))
    r_t = quat_to_matrix(q_inv)
    return RigidPose(q_inv, r_t @ (np.asarray(centroid, float) - pose.translation) / scale)


def target_to_camera_pose(target: RigidPose, centroid, scale: float) -> RigidPose:
    """Inverse of :func:`derive_alignment_target`."""
    q = quat_conjugate(target.rotation)
    return RigidPose(q, np.asarray(centroid, float) - scale * (quat_to_matrix(q) @ target.translation))


def alignment_residual(points, pose: RigidPose, centroid, scale: float, mesh: TriangleMesh) -> float:
    """Max distance (meters) of target-aligned points from the canonical mesh."""
    target = derive_alignment_target(pose, centroid, scale)
    aligned = transform_points(target, (np.asarray(points) - centroid) / scale) * scale
    return float(point_mesh_distance(aligned, mesh).max())


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class DatasetConfig:
    n_classes: int = 8
    instances: int = 40          # train instances per class
    test_instances: int = 10     # held-out instances per class
    views: int = 5               # views per train instance
    points: int = 1024
    model_points: int = 512
    seed: int = 0
    camera: PinholeCamera = field(default_factory=PinholeCamera)
    translation_ranges: tuple = DEFAULT_TRANSLATION_RANGES
    mesh_dir: str | None = None
    check_invariant: bool = True

    def to_json(self) -> dict:
        d = asdict(self)
        d["translation_ranges"] = [list(r) for r in self.translation_ranges]
        return d


@dataclass(frozen=True)
class _InstanceTask:
    instance_id: int
    class_id: int
    split: str
    n_views: int
    spec: ShapeSpec | None
    mesh_path: str | None


def _instance_rng(seed, instance_id):
    return np.random.default_rng(np.random.SeedSequence([seed, 0, instance_id]))


def _view_rng(seed, instance_id, view_id):
    return np.random.default_rng(np.random.SeedSequence([seed, 1, instance_id, view_id]))


def _run_instance(cfg: DatasetConfig, task: _InstanceTask):
    if task.spec is not None:
        mesh = generate_instance(task.spec, _instance_rng(cfg.seed, task.instance_id))
        symmetry = task.spec.symmetry.spec_id()
    else:
        mesh = normalize_mesh(load_mesh(task.mesh_path)).validate()
        symmetry = SymmetrySpec().spec_id()
    dense = mesh_surface_sample(mesh, 20 * cfg.model_points,
                                np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, task.instance_id])))
    model_pts = dense.points[farthest_point_indices(dense.points, cfg.model_points)]

    views = []
    for view_id in range(task.n_views):
        rng = _view_rng(cfg.seed, task.instance_id, view_id)
        cloud, pose = render_partial_view(mesh, None, cfg.camera, cfg.points, rng, cfg.translation_ranges)
        # Normalization metadata must describe the points as stored (float32).
        pts = cloud.points.astype(np.float32).astype(np.float64)
        _, centroid, scale = normalize_unit_sphere(PointCloud(pts))
        pose = pose.canonical()
        if cfg.check_invariant:
            res = alignment_residual(pts, pose, centroid, scale, mesh)
            if res > SURFACE_TOL:
                raise DatasetError(f"instance {task.instance_id} view {view_id}: "
                                   f"alignment residual {res:.3g} exceeds {SURFACE_TOL}")
        views.append((view_id, pose, centroid, scale, pts))
    return mesh, model_pts, symmetry, views


def _mesh_files(mesh_dir: Path, class_name: str, split: str, n: int, offset: int) -> list[Path]:
    cdir = mesh_dir / class_name
    if (cdir / split).is_dir():
        files = sorted(p for p in (cdir / split).iterdir() if p.suffix.lower() in (".off", ".obj"))
        return files[:n]
    files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in (".off", ".obj"))
    return files[offset:offset + n]


def _plan(cfg: DatasetConfig) -> tuple[list[str], list[_InstanceTask]]:
    tasks = []
    per_class = cfg.instances + cfg.test_instances
    if cfg.mesh_dir:
        mesh_dir = Path(cfg.mesh_dir)
        names = sorted(p.name for p in mesh_dir.iterdir() if p.is_dir())[:cfg.n_classes]
        for c, name in enumerate(names):
            train = _mesh_files(mesh_dir, name, "train", cfg.instances, 0)
            test = _mesh_files(mesh_dir, name, "test", cfg.test_instances, cfg.instances)
            for i, f in enumerate(train):
                tasks.append(_InstanceTask(c * per_class + i, c, "train", cfg.views, None, str(f)))
            for i, f in enumerate(test):
                tasks.append(_InstanceTask(c * per_class + cfg.instances + i, c, "test", 1, None, str(f)))
        return names, tasks
    specs = corpus(cfg.n_classes)
    for c, spec in enumerate(specs):
        for i in range(per_class):
            split = "train" if i < cfg.instances else "test"
            tasks.append(_InstanceTask(c * per_class + i, c, split, cfg.views if split == "train" else 1,
                                       spec, None))
    return [s.name for s in specs], tasks


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PPC_THREADS", "1")))
    except ValueError:
        return 1


def build_dataset(cfg: DatasetConfig, out) -> Path:
    """Render every (instance, view) and write the dataset; returns the manifest path."""
    if cfg.views not in (1, 5, 10):
        log.warning("views=%d differs from the 1/5/10 splits", cfg.views)
    out = Path(out)
    names, tasks = _plan(cfg)
    if not tasks:
        raise DatasetError("nothing to generate")
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_instance, [cfg] * len(tasks), tasks))
    else:
        results = [_run_instance(cfg, t) for t in tasks]

    symmetry_table = {}
    label_flip = sorted({names[t.class_id] for t in tasks if t.spec is not None and t.spec.label_flip})
    lines = []
    for task, (mesh, model_pts, symmetry, views) in zip(tasks, results):
        stem = f"i{task.instance_id:05d}"
        save_off(mesh, out / "meshes" / f"{stem}.off")
        write_ppc(out / "models" / f"{stem}.ppc", model_pts)
        symmetry_table[names[task.class_id]] = symmetry
        lines.append({"kind": "instance", "instance_id": task.instance_id, "class_id": task.class_id,
                      "split": task.split, "symmetry": symmetry,
                      "mesh": f"meshes/{stem}.off", "model_points": f"models/{stem}.ppc"})
        for view_id, pose, centroid, scale, pts in views:
            rel = f"samples/{task.split}/{stem}_v{view_id:02d}.ppc"
            write_ppc(out / rel, pts)
            rec = SampleRecord(task.instance_id, task.class_id, view_id, task.split, pose,
                               centroid, scale, symmetry, rel)
            lines.append(rec.to_json())

    header = {"kind": "header", "version": MANIFEST_VERSION, "classes": names,
              "symmetry": symmetry_table, "label_flip": label_flip, "config": cfg.to_json(), "aligned": None}
    return _write_manifest(out, header, lines)


def _write_manifest(out: Path, header: dict, lines: list[dict]) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / MANIFEST
    with path.open("w") as fh:
        for d in [header] + lines:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass
class Manifest:
    root: Path
    header: dict
    instances: dict[int, dict]
    samples: list[SampleRecord]

    @property
    def classes(self) -> list[str]:
        return self.header["classes"]

    @property
    def aligned(self) -> str | None:
        return self.header.get("aligned")

    def split(self, name: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.split == name]


def load_manifest(root) -> Manifest:
    root = Path(root)
    path = root / MANIFEST if root.is_dir() else root
    root = path.parent
    header, instances, samples = None, {}, []
    for line in path.read_text().splitlines():
        d = json.loads(line)
        kind = d.get("kind")
        if kind == "header":
            header = d
        elif kind == "instance":
            instances[d["instance_id"]] = d
        elif kind == "sample":
            samples.append(SampleRecord.from_json(d))
    if header is None:
        raise DatasetError(f"{path}: missing header line")
    return Manifest(root, header, instances, samples)


@dataclass
class SplitData:
    """In-memory arrays for one split."""

    points: np.ndarray          # (S, n, 3)
    q: np.ndarray               # (S, 4) camera-from-canonical rotations
    t: np.ndarray               # (S, 3)
    labels: np.ndarray          # (S,)
    symmetry: list              # SymmetrySpec per sample
    instance_ids: np.ndarray
    view_ids: np.ndarray
    centroids: np.ndarray
    scales: np.ndarray
    model_points: np.ndarray    # (S, M, 3), per-sample view of the instance's model points
    num_classes: int
    aligned: str | None = None
    label_flip: np.ndarray | None = None   # (S,) bool: half turn about canonical x is a symmetry

    def __len__(self):
        return len(self.labels)

    def pose(self, i: int) -> RigidPose:
        return RigidPose(self.q[i], self.t[i])


def load_split(root, split: str) -> SplitData:
    man = load_manifest(root)
    recs = man.split(split)
    if not recs:
        raise DatasetError(f"no samples in split {split!r}")
    models = {}
    for r in recs:
        if r.instance_id not in models:
            models[r.instance_id] = read_ppc(man.root / man.instances[r.instance_id]["model_points"])
    sym_cache: dict[str, SymmetrySpec] = {}
    flips = set(man.header.get("label_flip", []))
    return SplitData(
        points=np.stack([read_ppc(man.root / r.file) for r in recs]),
        q=np.array([r.pose.rotation for r in recs]),
        t=np.array([r.pose.translation for r in recs]),
        labels=np.array([r.class_id for r in recs], dtype=np.int64),
        symmetry=[sym_cache.setdefault(r.symmetry, SymmetrySpec.from_id(r.symmetry)) for r in recs],
        instance_ids=np.array([r.instance_id for r in recs], dtype=np.int64),
        view_ids=np.array([r.view_id for r in recs], dtype=np.int64),
        centroids=np.array([r.centroid for r in recs]),
        scales=np.array([r.scale for r in recs]),
        model_points=np.stack([models[r.instance_id] for r in recs]),
        num_classes=len(man.classes),
        aligned=man.aligned,
        label_flip=np.array([man.classes[r.class_id] in flips for r in recs]),
    )


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def align_dataset(root, out, source: str, predictor=None) -> Path:
    """Write a copy of the dataset whose sample files hold classifier-ready points.

    ``source``: ``none`` (normalized, unaligned), ``oracle`` (ground-truth target
    applied) or ``predicted`` (``predictor(points_normalized) -> RigidPose``).
    """
    if source not in ("none", "oracle", "predicted"):
        raise ValueError(f"unknown pose source {source!r}")
    if source == "predicted" and predictor is None:
        raise ValueError("predicted alignment needs a pose predictor")
    man = load_manifest(root)
    if man.aligned:
        raise DatasetError(f"{root} is already aligned ({man.aligned})")
    out = Path(out)
    lines = []
    for inst in man.instances.values():
        d = dict(inst)
        for key in ("mesh", "model_points"):
            src = man.root / inst[key]
            dst = out / inst[key]
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes(src.read_bytes())
        lines.append(d)
    for rec in man.samples:
        pts = read_ppc(man.root / rec.file)
        norm = (pts - rec.centroid) / rec.scale
        if source == "none":
            aligned = norm
        elif source == "oracle":
            aligned = transform_points(derive_alignment_target(rec.pose, rec.centroid, rec.scale), norm)
        else:
            aligned = transform_points(predictor(norm), norm)
        write_ppc(out / rec.file, aligned)
        lines.append(rec.to_json())
    header = dict(man.header, aligned=source)
    header["frame"] = (Frame.NORMALIZED if source == "none" else Frame.CANONICAL).value
    return _write_manifest(out, header, lines)
