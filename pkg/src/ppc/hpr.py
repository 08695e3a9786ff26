"""Hidden point removal by spherical flipping and convex hull membership."""

from __future__ import annotations

import numpy as np

from .geometry import GeometryError, PointCloud
from .hull import convex_hull_3d


def _flip(rel: np.ndarray, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise GeometryError("gamma must be positive")
    norms = np.linalg.norm(rel, axis=1)
    if np.any(norms == 0):
        raise GeometryError("a point coincides with the viewpoint")
    radius = norms.max() * 10.0 ** gamma
    return rel + 2.0 * ((radius - norms) / norms)[:, None] * rel


def spherical_flip(cloud: PointCloud, viewpoint, gamma: float = 1.0) -> PointCloud:
    """Flip points about a sphere of radius ``max|p - viewpoint| * 10**gamma``.

    The result is expressed relative to the viewpoint (viewpoint at the origin).
    """
    rel = cloud.points - np.asarray(viewpoint, dtype=np.float64)
    return cloud.with_points(_flip(rel, gamma))


def hidden_point_removal(cloud: PointCloud, viewpoint, gamma: float = 1.0) -> np.ndarray:
    """Boolean visibility mask over ``cloud`` as seen from ``viewpoint``."""
    if len(cloud) < 4:
        raise GeometryError("hidden point removal needs at least 4 points")
    flipped = spherical_flip(cloud, viewpoint, gamma).points
    hull = convex_hull_3d(np.vstack([flipped, np.zeros((1, 3))]))
    mask = np.zeros(len(cloud), dtype=bool)
    v = hull.vertices
    mask[v[v < len(cloud)]] = True
    return mask


def visible_subset(cloud: PointCloud, viewpoint, gamma: float = 1.0) -> PointCloud:
    return cloud.with_points(cloud.points[hidden_point_removal(cloud, viewpoint, gamma)])
