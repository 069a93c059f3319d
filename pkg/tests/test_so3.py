import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from torsim.so3 import exp_rotvec, log_rotmat, reparameterize_rotvec, hat

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3)


@given(vec3)
@settings(max_examples=200, deadline=None)
def test_exp_log_roundtrip(w):
    w = np.array(w)
    R = exp_rotvec(w)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(R), 1.0)
    w2 = log_rotmat(R)
    assert np.allclose(exp_rotvec(w2), R, atol=1e-9)


def test_log_near_pi():
    for axis in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]),
                 np.array([0.3, -0.5, 0.8]) / np.linalg.norm([0.3, -0.5, 0.8])):
        w = axis * (np.pi - 1e-9)
        R = exp_rotvec(w)
        assert np.allclose(exp_rotvec(log_rotmat(R)), R, atol=1e-7)


def test_reparameterize_near_two_pi():
    # |w| near 2*pi maps to |w| - 2*pi with the identical rotation
    axis = np.array([0.2, 0.9, -0.4])
    axis /= np.linalg.norm(axis)
    for theta in (2 * np.pi - 0.05, 2 * np.pi + 0.05, 1.7 * np.pi):
        w = axis * theta
        w2 = reparameterize_rotvec(w)
        assert np.linalg.norm(w2) <= np.pi + 1e-12
        assert np.isclose(np.linalg.norm(w2), abs(theta - 2 * np.pi), atol=1e-12)
        assert np.abs(exp_rotvec(w) - exp_rotvec(w2)).max() < 1e-9


def test_reparameterize_below_threshold_is_identity():
    w = np.array([0.1, -0.2, 0.3])
    assert np.array_equal(reparameterize_rotvec(w), w)


def test_hat_cross_product():
    a = np.array([1.0, -2.0, 0.5])
    b = np.array([0.3, 0.7, -1.1])
    assert np.allclose(hat(a) @ b, np.cross(a, b))
