"""Equiangular farthest-distance spherical signals.

Cell ``(j, k)`` spans longitude ``[2πj/W, 2π(j+1)/W)`` and colatitude
``[πk/H, π(k+1)/H)``, with ``k = 0`` at the +z pole. Each cell stores the
largest distance from the origin among the points that fall into it; empty
cells hold 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GeometryError, PointCloud


@dataclass(frozen=True)
class SphericalGrid:
    width: int = 64   # longitude cells (W)
    height: int = 64  # colatitude cells (H)

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise GeometryError("spherical grid needs W, H >= 2")


@dataclass(frozen=True)
class SphericalSignal:
    grid: SphericalGrid
    values: np.ndarray  # (W, H), indexed [j, k]

    def as_image(self) -> np.ndarray:
        """``(H, W)`` view: rows are colatitude, columns longitude."""
        return self.values.T


def bin_indices(points, grid: SphericalGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Longitude index ``j``, colatitude index ``k`` and radius for each point."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt((p * p).sum(axis=1))
    if np.any(r == 0):
        raise GeometryError("cannot bin the zero vector")
    lon = np.arctan2(p[:, 1], p[:, 0]) % (2 * np.pi)
    colat = np.arccos(np.clip(p[:, 2] / r, -1.0, 1.0))
    j = np.floor(grid.width * lon / (2 * np.pi)).astype(np.int64) % grid.width
    k = np.clip(np.floor(grid.height * colat / np.pi).astype(np.int64), 0, grid.height - 1)
    return j, k, r


def bin_index(point, grid: SphericalGrid) -> tuple[int, int]:
    j, k, _ = bin_indices(point, grid)
    return int(j[0]), int(k[0])


def encode_signal(cloud: PointCloud | np.ndarray, grid: SphericalGrid = SphericalGrid()) -> SphericalSignal:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise GeometryError("cannot encode an empty cloud")
    # Points at the origin carry no direction and a zero radius; they cannot raise any cell.
    pts = pts[(pts != 0).any(axis=1)]
    values = np.zeros(grid.width * grid.height)
    if len(pts):
        j, k, r = bin_indices(pts, grid)
        np.maximum.at(values, j * grid.height + k, r)
    return SphericalSignal(grid, values.reshape(grid.width, grid.height))


def write_sph(signal: SphericalSignal, path) -> None:
    """Little-endian ``u32 W, u32 H`` header, then float32 row-major ``(W, H)`` values."""
    g = signal.grid
    data = struct.pack("<II", g.width, g.height) + signal.values.astype("<f4").tobytes()
    Path(path).write_bytes(data)


def read_sph(path) -> SphericalSignal:
    data = Path(path).read_bytes()
    w, h = struct.unpack_from("<II", data)
    vals = np.frombuffer(data, dtype="<f4", offset=8, count=w * h).reshape(w, h)
    return SphericalSignal(SphericalGrid(w, h), vals.astype(np.float64))
