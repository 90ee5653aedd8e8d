import numpy as np
import pytest

from mvsfs.errors import OrthographicUnsupported
from mvsfs.geometry import (
    Intrinsics,
    Pose,
    backproject,
    camera_rays,
    look_at,
    normal_from_gradient,
    normalization_coefficient,
    project,
)


def test_intrinsics_validation_and_dict_roundtrip():
    with pytest.raises(ValueError):
        Intrinsics.perspective(0.0, 1, 1)
    with pytest.raises(ValueError):
        Intrinsics("orthographic", 2.0)
    for intr in (Intrinsics.orthographic(), Intrinsics.perspective(300.5, 63.5, 60.25)):
        assert Intrinsics.from_dict(intr.to_dict()) == intr


def test_orthographic_offsets_vanish():
    xt, yt = Intrinsics.orthographic().offsets([3.0, 7.0], [1.0, 2.0])
    assert np.all(xt == 0) and np.all(yt == 0)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose(2 * np.eye(3))


def test_orthographic_normal_matches_closed_form():
    zx, zy = 0.3, -0.4
    n = normal_from_gradient(zx, zy, Intrinsics.orthographic())
    expected = np.array([zx, zy, -1.0]) / np.sqrt(zx**2 + zy**2 + 1)
    np.testing.assert_allclose(n, expected, rtol=0, atol=1e-15)


def test_perspective_normal_is_orthogonal_to_surface_tangents():
    # plane a.X = 1 in camera coordinates, sampled through a pinhole camera
    intr = Intrinsics.perspective(200.0, 50.0, 40.0)
    a = np.array([0.1, -0.2, 0.5])

    def logdepth(x, y):
        ray = camera_rays(x, y, intr)
        return np.log(1.0 / (ray @ a))

    x, y, h = 70.0, 20.0, 1e-5
    zx = (logdepth(x + h, y) - logdepth(x - h, y)) / (2 * h)
    zy = (logdepth(x, y + h) - logdepth(x, y - h)) / (2 * h)
    n = normal_from_gradient(zx, zy, intr, x, y)
    assert abs(np.linalg.norm(n) - 1) < 1e-12
    # the plane normal is a up to sign; the surface normal faces the camera (n3 < 0)
    np.testing.assert_allclose(n, -a / np.linalg.norm(a), atol=1e-7)
    assert normalization_coefficient(zx, zy, intr, x, y) > 0


def test_project_inverts_backproject(rng):
    intr = Intrinsics.perspective(400.0, 64.0, 64.0)
    pose = look_at([3.0, 1.0, -10.0], [0.0, 0.0, 0.0])
    x = rng.uniform(0, 128, 50)
    y = rng.uniform(0, 128, 50)
    z = rng.uniform(1.0, 3.0, 50)
    px, py, depth = project(backproject(x, y, z, intr, pose), intr, pose)
    np.testing.assert_allclose(px, x, atol=1e-9)
    np.testing.assert_allclose(py, y, atol=1e-9)
    np.testing.assert_allclose(np.log(depth), z, atol=1e-12)


def test_look_at_points_optical_axis_at_target():
    pose = look_at([5.0, 0.0, -5.0], [0.0, 0.0, 0.0])
    axis = pose.R[:, 2]
    np.testing.assert_allclose(axis, -np.array([5.0, 0, -5.0]) / np.sqrt(50), atol=1e-15)
    # world up (0, -1, 0) appears upward: camera y axis points along +y world
    assert pose.R[1, 1] > 0.99


def test_rays_need_perspective():
    with pytest.raises(OrthographicUnsupported):
        camera_rays(1.0, 1.0, Intrinsics.orthographic())
