import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppc.geometry import (
    GeometryError,
    RigidPose,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_matrix,
    sample_pose,
    sample_uniform_rotation,
)
from ppc.metrics import (
    PoseError,
    SymmetrySpec,
    classification_accuracy,
    confusion_matrix,
    loss_geo,
    loss_pm,
    loss_reg,
    loss_total,
    pose_accuracy,
    pose_error,
    read_report_csv,
    symmetry_canonicalize,
    write_report_csv,
)

Z = (0, 0, 1)
SPECS = [SymmetrySpec(), SymmetrySpec.discrete(Z, 2), SymmetrySpec.discrete(Z, 4),
         SymmetrySpec.continuous(Z), SymmetrySpec.discrete((1, 0, 0), 3)]
IDENT = np.array([1.0, 0, 0, 0])


def trace_angle(q1, q2):
    r = quat_to_matrix(q1).T @ quat_to_matrix(q2)
    return np.arccos(np.clip((np.trace(r) - 1) / 2, -1, 1))


def test_loss_reg_examples():
    rng = np.random.default_rng(0)
    q, t = sample_uniform_rotation(rng), rng.normal(size=3)
    assert loss_reg(q, t, q, t) == 0
    assert loss_reg(q, t, -q, t) == 0
    assert loss_reg(q, t, q, t + [0.1, 0, 0], alpha=10) == pytest.approx(1.0)
    assert loss_reg(q, t, -q, t, double_cover=False) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        loss_reg(q, t, q, t, alpha=-1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_loss_reg_zero_iff_same_pose(seed):
    rng = np.random.default_rng(seed)
    a, b = sample_pose(rng), sample_pose(rng)
    assert loss_reg(a.rotation, a.translation, b.rotation, b.translation) > 0
    assert loss_reg(a.rotation, a.translation, -a.rotation, a.translation) == 0


def test_loss_geo_examples():
    q = quat_from_axis_angle([1, 2, 3], 0.4)
    assert loss_geo(q, q) == pytest.approx(0, abs=1e-7)
    for axis in ([1, 0, 0], [0.3, -0.2, 0.9]):
        assert loss_geo(q, quat_multiply(q, quat_from_axis_angle(axis, 1.1))) == pytest.approx(1.1, abs=1e-9)


def test_loss_geo_matches_trace_formula():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b = sample_uniform_rotation(rng), sample_uniform_rotation(rng)
        assert abs(loss_geo(a, b) - trace_angle(a, b)) < 1e-9


def test_loss_geo_is_metric():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b, c = (sample_uniform_rotation(rng) for _ in range(3))
        assert loss_geo(a, b) == pytest.approx(loss_geo(b, a), abs=1e-12)
        assert loss_geo(a, c) <= loss_geo(a, b) + loss_geo(b, c) + 1e-9


def test_loss_pm_examples():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(50, 3))
    q, t = sample_uniform_rotation(rng), rng.normal(size=3)
    assert loss_pm(q, t, q, t, x) == 0
    delta = np.array([0.3, -0.4, 0.0])
    assert loss_pm(q, t, q, t + delta, x) == pytest.approx(0.5, abs=1e-12)
    q2, t2 = sample_uniform_rotation(rng), rng.normal(size=3)
    brute = np.mean([np.linalg.norm(quat_to_matrix(q) @ p + t - quat_to_matrix(q2) @ p - t2) for p in x])
    assert loss_pm(q, t, q2, t2, x) == pytest.approx(brute, abs=1e-12)
    assert loss_pm(q, t, q2, t2, x[::-1]) == pytest.approx(brute, abs=1e-12)
    with pytest.raises(ValueError):
        loss_pm(q, t, q, t, np.zeros((0, 3)))


def test_loss_total_examples():
    assert loss_total(0.5, 0.2, lam=0) == 0.5
    assert loss_total(0.5, 0.2, lam=10) == pytest.approx(2.5)
    assert loss_total(0.5, 0.4, lam=10) - loss_total(0.5, 0.2, lam=10) == pytest.approx(10 * 0.2)


@pytest.mark.parametrize("spec", SPECS)
def test_canonicalize_identity(spec):
    np.testing.assert_allclose(symmetry_canonicalize(IDENT, spec), IDENT, atol=1e-12)


def test_pure_twist_removed():
    q = quat_from_axis_angle(Z, np.pi / 2)
    np.testing.assert_allclose(symmetry_canonicalize(q, SymmetrySpec.continuous(Z)), IDENT, atol=1e-12)


@pytest.mark.parametrize("spec", SPECS[1:])
def test_canonicalize_constant_on_group_orbit(spec):
    rng = np.random.default_rng(4)
    for _ in range(50):
        q = sample_uniform_rotation(rng)
        ref = symmetry_canonicalize(q, spec)
        elems = spec.group_elements() if spec.kind == "discrete" else [spec.random_element(rng) for _ in range(8)]
        for g in elems:
            got = symmetry_canonicalize(quat_multiply(q, g), spec)
            assert min(np.abs(got - ref).max(), np.abs(got + ref).max()) < 1e-9


def test_canonical_is_minimal_angle():
    rng = np.random.default_rng(5)
    spec = SymmetrySpec.discrete(Z, 4)
    for _ in range(100):
        q = sample_uniform_rotation(rng)
        c = symmetry_canonicalize(q, spec)
        best = min(loss_geo(IDENT, quat_multiply(q, g)) for g in spec.group_elements())
        assert loss_geo(IDENT, c) == pytest.approx(best, abs=1e-9)


def test_none_spec_keeps_matrix():
    rng = np.random.default_rng(6)
    for _ in range(50):
        q = sample_uniform_rotation(rng)
        np.testing.assert_allclose(quat_to_matrix(symmetry_canonicalize(q, SymmetrySpec())),
                                   quat_to_matrix(q), atol=1e-12)


def test_invalid_spec():
    with pytest.raises(GeometryError):
        symmetry_canonicalize(IDENT, "cylinder")
    with pytest.raises(GeometryError):
        SymmetrySpec.discrete(Z, 1)
    with pytest.raises(GeometryError):
        SymmetrySpec.continuous((0, 0, 2))


@pytest.mark.parametrize("spec", SPECS)
def test_spec_id_round_trip(spec):
    assert SymmetrySpec.from_id(spec.spec_id()) == spec


def test_pose_accuracy_thresholds():
    assert pose_accuracy([PoseError(0, 0)] * 3) == 1.0
    assert pose_accuracy([PoseError(11.0, 0.0)]) == 0.0
    assert pose_accuracy([PoseError(9.9, 0.099), PoseError(9.9, 0.1)]) == 0.5
    with pytest.raises(ValueError):
        pose_accuracy([])


def test_symmetric_rotation_not_penalized():
    pose = RigidPose([1, 0, 0, 0], [0, 0, 3])
    turned = RigidPose(quat_from_axis_angle(Z, 0.7), [0, 0, 3])
    assert pose_error(pose, turned, SymmetrySpec.continuous(Z)).rot_deg == pytest.approx(0, abs=1e-6)
    assert pose_error(pose, turned, SymmetrySpec()).rot_deg == pytest.approx(np.degrees(0.7))
    half = RigidPose(quat_from_axis_angle(Z, np.pi), [0, 0, 3])
    assert pose_error(pose, half, SymmetrySpec.discrete(Z, 2)).rot_deg == pytest.approx(0, abs=1e-6)


@pytest.mark.parametrize("spec", SPECS)
def test_pose_error_is_min_over_group(spec):
    rng = np.random.default_rng(7)
    for _ in range(30):
        gt, pred = sample_pose(rng), sample_pose(rng)
        elems = spec.group_elements(n_continuous=3600)
        brute = min(np.degrees(loss_geo(quat_multiply(gt.rotation, g), pred.rotation)) for g in elems)
        tol = 1e-6 if spec.kind != "continuous" else 0.06
        assert pose_error(gt, pred, spec).rot_deg == pytest.approx(brute, abs=tol)


def test_accuracy_invariant_to_shared_group_element():
    rng = np.random.default_rng(8)
    spec = SymmetrySpec.discrete(Z, 4)
    gts = [sample_pose(rng) for _ in range(200)]
    preds = [RigidPose(quat_multiply(g.rotation, quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.3))),
                       g.translation + rng.normal(0, 0.05, 3)) for g in gts]
    base = pose_accuracy([pose_error(g, p, spec) for g, p in zip(gts, preds)])
    g = spec.group_elements()[1]
    moved = pose_accuracy([pose_error(RigidPose(quat_multiply(a.rotation, g), a.translation),
                                      RigidPose(quat_multiply(b.rotation, g), b.translation), spec)
                           for a, b in zip(gts, preds)])
    assert base == moved and 0 < base < 1


def test_confusion_matrix():
    labels = np.array([0, 1, 2, 2, 1])
    np.testing.assert_array_equal(confusion_matrix(labels, labels, 3), np.diag([1, 2, 2]))
    preds = np.array([0, 2, 2, 1, 1])
    m = confusion_matrix(preds, labels, 3)
    assert m.sum() == 5
    np.testing.assert_array_equal(m.sum(axis=1), [1, 2, 2])
    assert np.trace(m) / m.sum() == classification_accuracy(preds, labels)
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 3)


def test_report_csv_round_trip(tmp_path):
    rows = [("joint", "test", "cls_acc", 0.5), {"method": "pose", "split": "test", "metric": "acc10", "value": 0.125}]
    write_report_csv(rows, tmp_path / "r.csv")
    back = read_report_csv(tmp_path / "r.csv")
    assert [r["value"] for r in back] == [0.5, 0.125]
    assert back[0]["method"] == "joint"
