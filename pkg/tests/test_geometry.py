import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppc.geometry import (
    Frame,
    GeometryError,
    PointCloud,
    RigidPose,
    denormalize,
    farthest_point_indices,
    farthest_point_sample,
    normalize_unit_sphere,
    pose_apply,
    pose_compose,
    pose_inverse,
    quat_canonical,
    quat_from_matrix,
    quat_to_matrix,
    sample_pose,
    sample_translation,
    sample_uniform_rotation,
    transform_points,
)
from ppc.mesh import TriangleMesh, mesh_surface_sample

S2 = np.sqrt(0.5)

finite = st.floats(-1.0, 1.0, allow_nan=False)
quats = st.tuples(finite, finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


def random_quats(n, seed=0):
    q = np.random.default_rng(seed).normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def test_identity_quaternion_gives_identity_matrix():
    np.testing.assert_array_equal(quat_to_matrix([1, 0, 0, 0]), np.eye(3))


def test_quarter_turn_about_z():
    r = quat_to_matrix([S2, 0, 0, S2])
    np.testing.assert_allclose(r @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_non_finite_quaternion_rejected():
    with pytest.raises(GeometryError):
        quat_to_matrix([np.nan, 0, 0, 1])
    with pytest.raises(GeometryError):
        RigidPose([0, 0, 0, 0], [0, 0, 0])


def test_matrix_round_trip_1000():
    for q in random_quats(1000):
        back = quat_from_matrix(quat_to_matrix(q))
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9


@settings(max_examples=200, deadline=None)
@given(quats)
def test_rotation_matrix_orthonormal(raw):
    q = np.asarray(raw) / np.linalg.norm(raw)
    r = quat_to_matrix(q)
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(r) - 1) < 1e-9
    np.testing.assert_array_equal(r, quat_to_matrix(-q))


def test_canonical_hemisphere():
    q = quat_canonical([-0.5, 0.5, 0.5, 0.5])
    assert q[0] >= 0
    np.testing.assert_allclose(quat_to_matrix(q), quat_to_matrix([-0.5, 0.5, 0.5, 0.5]))


def test_pose_apply_examples():
    cloud = PointCloud(np.random.default_rng(1).normal(size=(20, 3)))
    same = pose_apply(RigidPose.identity(), cloud)
    np.testing.assert_array_equal(same.points, cloud.points)
    turned = pose_apply(RigidPose([S2, 0, 0, S2], [0, 0, 0]), PointCloud(np.array([[1.0, 0, 0]])))
    np.testing.assert_allclose(turned.points, [[0, 1, 0]], atol=1e-15)


def test_pose_inverse_examples():
    ident = pose_inverse(RigidPose.identity())
    assert ident == RigidPose.identity()
    inv = pose_inverse(RigidPose([1, 0, 0, 0], [1.0, -2.0, 3.0]))
    np.testing.assert_allclose(inv.translation, [-1, 2, -3])


def test_inverse_composition_1000_points():
    rng = np.random.default_rng(3)
    pose = sample_pose(rng)
    pts = rng.normal(size=(1000, 3))
    back = transform_points(pose_inverse(pose), transform_points(pose, pts))
    assert np.abs(back - pts).max() < 1e-9
    ident = pose_compose(pose, pose_inverse(pose))
    assert np.abs(ident.matrix - np.eye(3)).max() < 1e-9
    assert np.abs(ident.translation).max() < 1e-9


def test_composition_associative():
    rng = np.random.default_rng(4)
    a, b, c = (sample_pose(rng) for _ in range(3))
    left = pose_compose(pose_compose(a, b), c).as_matrix4()
    right = pose_compose(a, pose_compose(b, c)).as_matrix4()
    assert np.abs(left - right).max() < 1e-9


def test_pose_apply_preserves_distances():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(200, 3))
    out = transform_points(sample_pose(rng), pts)
    i, j = rng.integers(0, 200, (2, 500))
    d0 = np.linalg.norm(pts[i] - pts[j], axis=1)
    d1 = np.linalg.norm(out[i] - out[j], axis=1)
    assert np.abs(d0 - d1).max() < 1e-9


def test_uniform_rotation_deterministic():
    a = [sample_uniform_rotation(np.random.default_rng(9)) for _ in range(3)]
    b = [sample_uniform_rotation(np.random.default_rng(9)) for _ in range(3)]
    np.testing.assert_array_equal(a, b)


def _haar_samples(n, seed):
    rng = np.random.default_rng(seed)
    return np.array([sample_uniform_rotation(rng) for _ in range(n)])


def test_haar_angle_cdf():
    q = _haar_samples(100_000, 11)
    assert np.allclose(np.linalg.norm(q, axis=1), 1, atol=1e-12)
    theta = np.sort(2 * np.arccos(np.clip(np.abs(q[:, 0]), 0, 1)))
    cdf = (theta - np.sin(theta)) / np.pi
    emp_hi = np.arange(1, len(theta) + 1) / len(theta)
    emp_lo = np.arange(len(theta)) / len(theta)
    ks = max(np.abs(emp_hi - cdf).max(), np.abs(emp_lo - cdf).max())
    assert ks < 0.01


def test_haar_cdf_formula_matches_rejection_oracle():
    # Rejection-sample the angle density (1 - cos t) / pi on [0, pi].
    rng = np.random.default_rng(12)
    t = rng.uniform(0, np.pi, 400_000)
    keep = rng.uniform(0, 2, t.size) < 1 - np.cos(t)
    t = t[keep]
    for x in (0.5, 1.0, 2.0, 3.0):
        assert abs((t < x).mean() - (x - np.sin(x)) / np.pi) < 0.01


def test_rotated_vector_mean_vanishes():
    q = _haar_samples(100_000, 13)
    w, x, y, z = q.T
    # First column of each rotation matrix, i.e. R @ e_x.
    col = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)], 1)
    assert np.linalg.norm(col.mean(axis=0)) < 0.02


def test_translation_ranges():
    rng = np.random.default_rng(14)
    t = np.array([sample_translation(rng) for _ in range(100_000)])
    assert (np.abs(t[:, :2]) <= 2).all()
    assert ((t[:, 2] >= 2) & (t[:, 2] <= 5)).all()
    np.testing.assert_allclose(t.mean(axis=0), [0, 0, 3.5], atol=0.02)


def test_translation_degenerate_and_invalid_ranges():
    rng = np.random.default_rng(15)
    np.testing.assert_array_equal(sample_translation(rng, ((1, 1), (2, 2), (3, 3))), [1, 2, 3])
    with pytest.raises(GeometryError):
        sample_translation(rng, ((1, 0), (0, 1), (0, 1)))


def test_normalize_examples():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    out, c, s = normalize_unit_sphere(PointCloud(pts))
    np.testing.assert_array_equal(out.points, pts)
    np.testing.assert_array_equal(c, 0)
    assert s == 1 and out.frame is Frame.NORMALIZED

    out, c, s = normalize_unit_sphere(PointCloud(np.array([[0, 0, 2.0], [0, 0, 4.0]])))
    np.testing.assert_array_equal(c, [0, 0, 3])
    assert s == 1
    np.testing.assert_array_equal(out.points, [[0, 0, -1], [0, 0, 1]])


def test_normalize_round_trip_and_idempotent():
    pts = np.random.default_rng(16).normal(3, 2, size=(500, 3))
    out, c, s = normalize_unit_sphere(PointCloud(pts))
    assert abs(np.linalg.norm(out.points, axis=1).max() - 1) < 1e-12
    assert np.abs(denormalize(out.points, c, s) - pts).max() < 1e-12
    again, c2, s2 = normalize_unit_sphere(out)
    assert np.abs(again.points - out.points).max() < 1e-12


def test_normalize_degenerate():
    with pytest.raises(GeometryError):
        normalize_unit_sphere(PointCloud(np.ones((5, 3))))


def test_surface_sample_single_triangle():
    tri = TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]), np.array([[0, 1, 2]]))
    pts = mesh_surface_sample(tri, 1000, np.random.default_rng(0)).points
    assert (pts[:, 0] >= -1e-12).all() and (pts[:, 1] >= -1e-12).all()
    assert (pts[:, 0] + pts[:, 1] <= 1 + 1e-12).all()
    np.testing.assert_array_equal(pts[:, 2], 0)


def test_surface_sample_cube_faces(unit_cube):
    pts = mesh_surface_sample(unit_cube, 100_000, np.random.default_rng(1)).points
    on_face = np.isclose(np.abs(pts), 0.5, atol=1e-12)
    face = np.argmax(on_face, axis=1) * 2 + (pts[np.arange(len(pts)), np.argmax(on_face, axis=1)] > 0)
    share = np.bincount(face, minlength=6) / len(pts)
    assert np.abs(share - 1 / 6).max() < 0.01


def test_surface_sample_deterministic(unit_cube):
    a = mesh_surface_sample(unit_cube, 50, np.random.default_rng(2)).points
    b = mesh_surface_sample(unit_cube, 50, np.random.default_rng(2)).points
    np.testing.assert_array_equal(a, b)


def test_fps_examples():
    line = np.zeros((10, 3))
    line[:, 0] = np.arange(10)
    assert sorted(farthest_point_indices(line, 2)) == [0, 9]
    pts = np.random.default_rng(3).normal(size=(30, 3))
    assert sorted(farthest_point_indices(pts, 30)) == list(range(30))
    with pytest.raises(GeometryError):
        farthest_point_sample(PointCloud(pts), 31)


def _greedy_oracle(pts, m):
    chosen = [0]
    for _ in range(m - 1):
        d = [min(np.linalg.norm(p - pts[c]) for c in chosen) for p in pts]
        chosen.append(int(np.argmax(d)))
    return chosen


def _min_pairwise(p):
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    return d[np.triu_indices(len(p), 1)].min()


def test_fps_matches_greedy_oracle():
    pts = np.random.default_rng(4).normal(size=(300, 3))
    ours = farthest_point_sample(PointCloud(pts), 64).points
    oracle = pts[_greedy_oracle(pts, 64)]
    assert _min_pairwise(ours) >= _min_pairwise(oracle) - 1e-12
