import numpy as np
import pytest

from torsim.skeleton import (BALL3, Body, GeneralizedState, Kinematics,
                             SkeletonModel, bias_forces, body_transforms,
                             forward_dynamics, forward_dynamics_dense,
                             integrate, integrate_positions, kinetic_energy,
                             mass_matrix, point_jacobian, potential_energy,
                             total_momentum, world_point)
from torsim.so3 import exp_rotvec, log_rotmat
from scenes import ball_chain, pendulum_rod


# ---------------------------------------------------------------------------
# mass matrix
# ---------------------------------------------------------------------------

def test_single_free_body_blocks():
    inertia = np.diag([0.01, 0.02, 0.03])
    m = SkeletonModel([Body("b", 2.0, inertia, -1)])
    M = mass_matrix(m, np.zeros(6))
    assert np.allclose(M[3:, 3:], 2.0 * np.eye(3))
    # at the identity pose world frame and body frame coincide, so the
    # rotational block equals the world-frame inertia tensor
    assert np.allclose(M[:3, :3], inertia)


def test_mass_matrix_matches_kinetic_energy_hessian():
    model = ball_chain(3)
    rng = np.random.default_rng(0)
    q = rng.normal(size=model.num_dof) * 0.5
    qd = rng.normal(size=model.num_dof)
    M = mass_matrix(model, q)
    assert abs(0.5 * qd @ M @ qd - kinetic_energy(model, q, qd)) < 1e-10
    eps = 1e-5
    H = np.zeros_like(M)
    for i in range(model.num_dof):
        for j in range(i, model.num_dof):
            ei = np.zeros(model.num_dof); ei[i] = eps
            ej = np.zeros(model.num_dof); ej[j] = eps
            H[i, j] = H[j, i] = (
                kinetic_energy(model, q, qd + ei + ej)
                - kinetic_energy(model, q, qd + ei - ej)
                - kinetic_energy(model, q, qd - ei + ej)
                + kinetic_energy(model, q, qd - ei - ej)) / (4 * eps * eps)
    assert np.abs(M - H).max() < 1e-5


def test_mass_matrix_symmetric_positive_definite_random_states():
    model = ball_chain(4)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        q = rng.normal(size=model.num_dof)
        M = mass_matrix(model, q)
        assert np.abs(M - M.T).max() < 1e-10
        assert np.linalg.eigvalsh(M).min() > 0


# ---------------------------------------------------------------------------
# forward dynamics
# ---------------------------------------------------------------------------

def test_free_fall():
    m = SkeletonModel([Body("b", 2.0, np.diag([0.01, 0.02, 0.03]), -1)])
    qdd = forward_dynamics(m, np.zeros(6), np.zeros(6), np.zeros(6))
    assert np.allclose(qdd[3:], [0.0, -9.81, 0.0])
    assert np.allclose(qdd[:3], 0.0)


def test_zero_gravity_rest_gives_zero_acceleration():
    model = ball_chain(3, gravity=(0, 0, 0))
    qdd = forward_dynamics(model, np.zeros(model.num_dof),
                           np.zeros(model.num_dof), np.zeros(model.num_dof))
    assert np.abs(qdd).max() < 1e-12


def test_pendulum_analytic_angular_acceleration():
    L = 0.8
    model = pendulum_rod(length=L)
    # rotate the rod about z so it lies horizontal
    q = np.array([0.0, 0.0, np.pi / 2])
    qdd = forward_dynamics(model, q, np.zeros(3), np.zeros(3))
    alpha = np.linalg.norm(qdd)
    expected = 3.0 * 9.81 / (2.0 * L)
    assert abs(alpha - expected) / expected < 1e-6


def test_aba_matches_dense_route():
    model = ball_chain(4)
    rng = np.random.default_rng(2)
    for _ in range(10):
        q = rng.normal(size=model.num_dof)
        qd = rng.normal(size=model.num_dof)
        tau = rng.normal(size=model.num_dof)
        qdd = forward_dynamics(model, q, qd, tau)
        qdd2 = forward_dynamics_dense(model, q, qd, tau)
        assert np.abs(qdd - qdd2).max() < 1e-9
        # M qdd + c = tau
        res = mass_matrix(model, q) @ qdd + bias_forces(model, q, qd) - tau
        assert np.abs(res).max() / max(np.abs(tau).max(), 1.0) < 1e-8


def test_non_finite_inputs_rejected():
    model = ball_chain(2)
    q = np.zeros(model.num_dof); q[0] = np.nan
    with pytest.raises(ValueError):
        forward_dynamics(model, q, np.zeros(model.num_dof), np.zeros(model.num_dof))


# ---------------------------------------------------------------------------
# point jacobians
# ---------------------------------------------------------------------------

def test_root_point_jacobian_translational_identity():
    m = SkeletonModel([Body("b", 1.0, np.diag([0.01, 0.01, 0.01]), -1)])
    J = point_jacobian(m, np.zeros(6), 0, np.zeros(3))
    assert np.allclose(J[:, 3:], np.eye(3))


def test_point_jacobian_matches_finite_differences():
    model = ball_chain(3)
    rng = np.random.default_rng(4)
    q = rng.normal(size=model.num_dof) * 0.4
    qd = rng.normal(size=model.num_dof)
    pt = np.array([0.02, 0.15, -0.01])
    J = point_jacobian(model, q, 2, pt)
    h = 1e-6
    q2 = integrate_positions(model, q, qd, h)
    p1 = world_point(Kinematics(model, q).T[2], pt)
    p2 = world_point(Kinematics(model, q2).T[2], pt)
    v_fd = (p2 - p1) / h
    assert np.abs(J @ qd - v_fd).max() / max(np.abs(v_fd).max(), 1e-9) < 1e-5


def test_point_jacobian_structural_sparsity():
    # DoFs of joints outside the chain to the body give zero columns
    model = ball_chain(3)
    rng = np.random.default_rng(5)
    q = rng.normal(size=model.num_dof)
    J = point_jacobian(model, q, 1, np.zeros(3))
    assert np.abs(J[:, model.joint_slice(2)]).max() == 0.0


def test_invalid_body_id():
    model = ball_chain(2)
    with pytest.raises(IndexError):
        point_jacobian(model, np.zeros(model.num_dof), 99, np.zeros(3))


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def test_integrate_zero_acceleration_keeps_velocity():
    model = ball_chain(2)
    rng = np.random.default_rng(6)
    q = rng.normal(size=model.num_dof)
    qd = rng.normal(size=model.num_dof)
    q2, qd2 = integrate(model, q, qd, np.zeros(model.num_dof), 1e-3)
    assert np.array_equal(qd2, qd)


def test_integrate_translation_advance():
    m = SkeletonModel([Body("b", 1.0, np.diag([0.01, 0.01, 0.01]), -1)])
    q = np.zeros(6)
    qd = np.zeros(6); qd[3] = 1.0
    q2, _ = integrate(m, q, qd, np.zeros(6), 1.0 / 600.0)
    assert abs(q2[3] - 1.0 / 600.0) < 1e-15


def test_integrate_rejects_nonpositive_step():
    model = ball_chain(2)
    with pytest.raises(ValueError):
        integrate(model, np.zeros(model.num_dof), np.zeros(model.num_dof),
                  np.zeros(model.num_dof), 0.0)


def test_spinning_body_momentum_conservation():
    # tumbling free body, no torque, no gravity: angular momentum audit
    m = SkeletonModel([Body("b", 1.0, np.diag([0.01, 0.02, 0.03]), -1)],
                      gravity=(0, 0, 0))
    h = 1.0 / 1800.0
    q = np.zeros(6)
    qd = np.zeros(6); qd[:3] = [0.6, 0.4, -0.5]
    p0 = total_momentum(m, q, qd)
    for _ in range(10000):
        qdd = forward_dynamics(m, q, qd, np.zeros(6), gyro_dt=h)
        q, qd = integrate(m, q, qd, qdd, h)
    p1 = total_momentum(m, q, qd)
    assert np.linalg.norm(p1 - p0) / np.linalg.norm(p0) < 1e-6


def test_energy_bounded_conservative_system():
    # undamped pendulum at 1800 Hz: total energy stays bounded, no explosion
    model = pendulum_rod()
    h = 1.0 / 1800.0
    q = np.array([0.0, 0.0, np.pi / 2])
    qd = np.zeros(3)
    e0 = kinetic_energy(model, q, qd) + potential_energy(model, q)
    emax = -np.inf
    for _ in range(3600):
        qdd = forward_dynamics(model, q, qd, np.zeros(3))
        q, qd = integrate(model, q, qd, qdd, h)
        emax = max(emax, abs(kinetic_energy(model, q, qd)
                             + potential_energy(model, q) - e0))
    scale = model.bodies[0].mass * 9.81 * 0.8
    assert emax / scale < 0.01


def test_exponential_map_reparameterization_in_rotation():
    # integrating through large angles keeps coordinates in the principal ball
    model = ball_chain(1, gravity=(0, 0, 0))
    q = np.zeros(model.num_dof)
    qd = np.zeros(model.num_dof); qd[:3] = [0.0, 8.0, 0.0]
    h = 1e-3
    R_expected = np.eye(3)
    for _ in range(1000):
        R_expected = R_expected @ exp_rotvec(h * qd[:3])
        q = integrate_positions(model, q, qd, h)
        assert np.linalg.norm(q[:3]) <= np.pi + 1e-9
    assert np.abs(exp_rotvec(q[:3]) - R_expected).max() < 1e-9


def test_generalized_state_validation():
    with pytest.raises(ValueError):
        GeneralizedState(np.zeros(3), np.zeros(4))
