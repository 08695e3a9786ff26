"""Parametric watertight shapes standing in for CAD models.

Every generator builds an outward-wound closed mesh with its symmetry axis (if
any) on +z, then centers the bounding box at the origin and scales the largest
extent to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError
from .metrics import SymmetrySpec
from .mesh import TriangleMesh

Z = (0.0, 0.0, 1.0)


def _prism(polygon: np.ndarray, z0: float, z1: float) -> tuple[np.ndarray, list]:
    """Extrude a CCW polygon along z; caps are fans from vertex 0."""
    n = len(polygon)
    bottom = np.column_stack([polygon, np.full(n, z0)])
    top = np.column_stack([polygon, np.full(n, z1)])
    verts = np.vstack([bottom, top])
    tris = []
    for i in range(1, n - 1):
        tris.append([0, i + 1, i])
        tris.append([n, n + i, n + i + 1])
    for i in range(n):
        j = (i + 1) % n
        tris.append([i, j, n + j])
        tris.append([i, n + j, n + i])
    return verts, tris


def _ring(radius: float, n: int, z: float, phase: float = 0.0) -> np.ndarray:
    a = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([radius * np.cos(a), radius * np.sin(a), np.full(n, z)])


def _box(p):
    poly = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float) * [p["sx"] / 2, p["sy"] / 2]
    return _prism(poly, -p["sz"] / 2, p["sz"] / 2)


def _cylinder(p, n=32):
    return _prism(_ring(p["radius"], n, 0.0)[:, :2], 0.0, p["height"])


def _cone(p, n=32, phase=0.0):
    ring = _ring(p["radius"], n, 0.0, phase)
    verts = np.vstack([ring, [[0, 0, p["height"]], [0, 0, 0]]])
    apex, center = n, n + 1
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris.append([i, j, apex])
        tris.append([center, j, i])
    return verts, tris


def _pyramid(p):
    # Square base with axis-aligned edges: a 4-sided cone rotated by 45°.
    return _cone({"radius": p["half_base"] * np.sqrt(2), "height": p["height"]}, n=4, phase=np.pi / 4)


def _l_bracket(p):
    w, h, t = p["width"], p["height"], p["thickness"]
    if t >= min(w, h):
        raise GeometryError("bracket thickness exceeds leg length")
    poly = np.array([[0, 0], [w, 0], [w, t], [t, t], [t, h], [0, h]], float)
    return _prism(poly, 0.0, p["depth"])


def _wedge(p):
    # Isosceles triangle cross-section in x-z, extruded along y.
    a, h, b = p["half_base"], p["height"], p["length"]
    verts, tris = _prism(np.array([[-a, 0], [a, 0], [0, h]], float), -b / 2, b / 2)
    rot_x90 = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]], float)
    return verts @ rot_x90.T, tris


def _torus(p, nu=24, nv=12):
    big, small = p["major"], p["minor"]
    if small >= big:
        raise GeometryError("torus minor radius must be below the major radius")
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    verts = np.stack([(big + small * np.cos(vv)) * np.cos(uu),
                      (big + small * np.cos(vv)) * np.sin(uu),
                      small * np.sin(vv)], axis=-1).reshape(-1, 3)
    tris = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            tris += [[a, b, c], [a, c, d]]
    return verts, tris


def _tube(p, n=32):
    outer, h = p["radius"], p["height"]
    inner = outer * p["inner_ratio"]
    if not 0 < inner < outer:
        raise GeometryError("tube inner radius must lie in (0, outer)")
    ob, ot = _ring(outer, n, 0.0), _ring(outer, n, h)
    ib, it = _ring(inner, n, 0.0), _ring(inner, n, h)
    verts = np.vstack([ob, ot, ib, it])
    OB, OT, IB, IT = 0, n, 2 * n, 3 * n
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris += [[OB + i, OB + j, OT + j], [OB + i, OT + j, OT + i]]
        tris += [[IB + i, IT + j, IB + j], [IB + i, IT + i, IT + j]]
        tris += [[OT + i, OT + j, IT + j], [OT + i, IT + j, IT + i]]
        tris += [[OB + i, IB + j, OB + j], [OB + i, IB + i, IB + j]]
    return verts, tris


GENERATORS = {
    "box": _box,
    "cylinder": _cylinder,
    "cone": _cone,
    "l_bracket": _l_bracket,
    "wedge": _wedge,
    "torus": _torus,
    "pyramid": _pyramid,
    "tube": _tube,
}
GENUS = {"torus": 1, "tube": 1}


@dataclass(frozen=True)
class ShapeSpec:
    name: str
    generator: str
    params: dict = field(default_factory=dict)  # name -> (lo, hi)
    symmetry: SymmetrySpec = field(default_factory=SymmetrySpec)
    # The shape also maps onto itself under a half turn about canonical x. Evaluation
    # ignores this; training uses it to give visually identical views one label.
    label_flip: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise GeometryError(f"unknown shape generator {self.generator!r}")
        for k, (lo, hi) in self.params.items():
            if not lo <= hi:
                raise GeometryError(f"{self.name}: bad range for {k}: ({lo}, {hi})")

    @property
    def genus(self) -> int:
        return GENUS.get(self.generator, 0)


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box on the origin and scale the largest extent to 1."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise GeometryError("mesh has zero extent")
    return TriangleMesh((mesh.vertices - (lo + hi) / 2) / extent, mesh.triangles)


def generate_instance(spec: ShapeSpec, rng: np.random.Generator, max_tries: int = 10) -> TriangleMesh:
    last = None
    for _ in range(max_tries):
        params = {k: float(rng.uniform(lo, hi)) if hi > lo else float(lo)
                  for k, (lo, hi) in sorted(spec.params.items())}
        try:
            verts, tris = GENERATORS[spec.generator](params)
            return normalize_mesh(TriangleMesh(verts, np.array(tris))).validate()
        except GeometryError as exc:
            last = exc
    raise GeometryError(f"{spec.name}: no valid instance after {max_tries} draws ({last})")


MINI_PARTIAL_NET_8 = (
    ShapeSpec("box", "box", {"sx": (0.3, 1.0), "sy": (0.3, 1.0), "sz": (0.3, 1.0)},
              SymmetrySpec.discrete(Z, 2), label_flip=True),
    ShapeSpec("cylinder", "cylinder", {"radius": (0.15, 0.5), "height": (0.5, 1.5)},
              SymmetrySpec.continuous(Z), label_flip=True),
    ShapeSpec("cone", "cone", {"radius": (0.2, 0.5), "height": (0.5, 1.5)},
              SymmetrySpec.continuous(Z)),
    ShapeSpec("l_bracket", "l_bracket",
              {"width": (0.6, 1.0), "height": (0.6, 1.0), "thickness": (0.12, 0.3), "depth": (0.3, 0.8)},
              SymmetrySpec()),
    ShapeSpec("wedge", "wedge", {"half_base": (0.25, 0.6), "height": (0.3, 1.0), "length": (0.4, 1.0)},
              SymmetrySpec.discrete(Z, 2)),
    ShapeSpec("torus", "torus", {"major": (0.5, 0.8), "minor": (0.1, 0.3)},
              SymmetrySpec.continuous(Z), label_flip=True),
    ShapeSpec("pyramid", "pyramid", {"half_base": (0.25, 0.6), "height": (0.4, 1.2)},
              SymmetrySpec.discrete(Z, 4)),
    ShapeSpec("tube", "tube", {"radius": (0.3, 0.5), "inner_ratio": (0.5, 0.85), "height": (0.5, 1.5)},
              SymmetrySpec.continuous(Z), label_flip=True),
)


def corpus(n_classes: int = 8) -> tuple[ShapeSpec, ...]:
    if not 1 <= n_classes <= len(MINI_PARTIAL_NET_8):
        raise ValueError(f"procedural corpus has 1..{len(MINI_PARTIAL_NET_8)} classes")
    return MINI_PARTIAL_NET_8[:n_classes]
