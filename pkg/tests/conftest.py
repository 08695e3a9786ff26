import numpy as np
import pytest

from ppc.mesh import TriangleMesh


def uv_sphere(radius=1.0, n_lon=64, n_lat=32, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed latitude-longitude sphere with pole vertices."""
    verts = [[0, 0, radius]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append([radius * np.sin(th) * np.cos(ph), radius * np.sin(th) * np.sin(ph), radius * np.cos(th)])
    verts.append([0, 0, -radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + j % n_lon

    tris = []
    for j in range(n_lon):
        tris.append([0, ring(1, j), ring(1, j + 1)])
        tris.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            tris += [[a, c, d], [a, d, b]]
    return TriangleMesh(np.array(verts) + np.asarray(center), np.array(tris))


@pytest.fixture
def unit_cube() -> TriangleMesh:
    from ppc.shapes import GENERATORS
    verts, tris = GENERATORS["box"]({"sx": 1.0, "sy": 1.0, "sz": 1.0})
    return TriangleMesh(np.asarray(verts, float), np.asarray(tris))


@pytest.fixture
def sphere_mesh() -> TriangleMesh:
    return uv_sphere()


TINY_DATA = dict(n_classes=8, instances=2, test_instances=1, views=2, points=256, model_points=64, seed=3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small synthetic corpus shared by dataset, pipeline and CLI tests."""
    from ppc.dataset import DatasetConfig, build_dataset
    out = tmp_path_factory.mktemp("tiny") / "data"
    build_dataset(DatasetConfig(**TINY_DATA), out)
    return out


# Acceptance criteria record one verdict line each; they are echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
