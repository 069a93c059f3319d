import numpy as np
import pytest
import scipy.optimize
import scipy.spatial
from hypothesis import given, settings
from hypothesis import strategies as st

from torsim.fem import (SingularSystemError, build_disc_system, coupling_force,
                        energy_gradient, project_corotational, project_volume,
                        quasistatic_solve, rotation_projections,
                        variational_energy, volume_projections)
from torsim.so3 import exp_rotvec
from torsim.tetmesh import DegenerateTetError, TetMesh
from scenes import disc_fixture, regular_tet_mesh


# ---------------------------------------------------------------------------
# build_disc_system
# ---------------------------------------------------------------------------

def test_single_tet_system_is_12x12_spd():
    mesh = regular_tet_mesh()
    system = build_disc_system(mesh, 1e6, 1e6, 1e4, [(0, 0, mesh.vertices[0])])
    L = system.full_global_matrix()
    assert L.shape == (12, 12)
    assert np.abs(L - L.T).max() < 1e-8
    assert np.linalg.eigvalsh(L).min() > 0


def test_127_vertex_mesh_gives_381_dof_system():
    # any valid 127-vertex tet mesh: Delaunay of a seeded cloud in a cylinder
    rng = np.random.default_rng(42)
    pts = rng.uniform(-1.0, 1.0, size=(127, 3))
    pts[:, [0, 2]] *= 0.02
    pts[:, 1] *= 0.005
    tri = scipy.spatial.Delaunay(pts)
    edges = pts[tri.simplices]
    vols = np.abs(np.linalg.det(np.stack(
        [edges[:, 1] - edges[:, 0], edges[:, 2] - edges[:, 0],
         edges[:, 3] - edges[:, 0]], axis=2))) / 6.0
    keep = tri.simplices[vols > 1e-11]
    used = np.unique(keep)
    assert len(used) == 127, "all cloud points participate"
    mesh = TetMesh(vertices=pts, tets=keep)
    assert mesh.num_vertices == 127
    att = [(int(i), 0, pts[int(i)]) for i in mesh.boundary_vertex_ids[:8]]
    system = build_disc_system(mesh, 1e6, 1e6, 1e4, att)
    assert system.full_global_matrix().shape == (381, 381)


def test_no_attachment_is_singular_system():
    verts = np.vstack([regular_tet_mesh().vertices,
                       regular_tet_mesh().vertices + np.array([0.1, 0, 0])])
    tets = np.array([[0, 1, 2, 3], [4, 5, 6, 7]])
    mesh = TetMesh(vertices=verts, tets=tets)
    with pytest.raises(SingularSystemError, match="singular system"):
        build_disc_system(mesh, 1e6, 1e6, 1e4, [])


def test_degenerate_tet_rejected():
    # volume below the 1e-12 m^3 floor
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 1e-12]], dtype=float)
    with pytest.raises(DegenerateTetError):
        TetMesh(vertices=verts, tets=np.array([[0, 1, 2, 3]]))


def test_factorization_reproduces_matrix():
    system, rest, _ = disc_fixture()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(system.mesh.num_vertices, 3))
    y = system.solve_global(system.global_matrix @ x)
    assert np.abs(y - x).max() / np.abs(x).max() < 1e-8


# ---------------------------------------------------------------------------
# local projections
# ---------------------------------------------------------------------------

def _svd_polar_oracle(F):
    # independent closed-form polar decomposition oracle
    U, s, Vt = np.linalg.svd(F)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def test_corotational_rest_is_identity():
    mesh = regular_tet_mesh()
    system = build_disc_system(mesh, 1e6, 1e6, 1e4, [(0, 0, mesh.vertices[0])])
    R = project_corotational(system, mesh.vertices, 0)
    assert np.abs(R - np.eye(3)).max() < 1e-12
    e = variational_energy(system, mesh.vertices, mesh.vertices[:1],
                           include=("corotational_elastic",))
    assert e < 1e-20


def test_corotational_rigid_rotation_gives_that_rotation():
    mesh = regular_tet_mesh()
    system = build_disc_system(mesh, 1e6, 1e6, 1e4, [(0, 0, mesh.vertices[0])])
    R0 = exp_rotvec([0.4, -0.3, 0.9])
    x = mesh.vertices @ R0.T
    R = project_corotational(system, x, 0)
    assert np.abs(R - R0).max() < 1e-10
    e = variational_energy(system, x, x[:1], include=("corotational_elastic",))
    assert e < 1e-18


def test_corotational_uniform_stretch():
    # F = 2I projects to I; elastic energy has the closed form
    mesh = regular_tet_mesh()
    system = build_disc_system(mesh, 1e6, 1e6, 1e4, [(0, 0, mesh.vertices[0])])
    x = 2.0 * mesh.vertices
    F = mesh.deformation_gradients(x)[0]
    assert np.abs(F - 2 * np.eye(3)).max() < 1e-10
    R = project_corotational(system, x, 0)
    assert np.abs(R - _svd_polar_oracle(F)).max() < 1e-12
    assert np.abs(R - np.eye(3)).max() < 1e-12
    e = variational_energy(system, x, 2 * mesh.vertices[:1],
                           include=("corotational_elastic",))
    expected = 0.5 * 1e6 * mesh.rest_volume[0] * np.sum((2 * np.eye(3) - np.eye(3)) ** 2)
    assert abs(e - expected) / expected < 1e-12


def _volume_oracle(sigma):
    # independent 3-variable oracle: constrained minimization over singular values
    res = scipy.optimize.minimize(
        lambda d: np.sum((d - sigma) ** 2),
        x0=sigma / np.cbrt(np.prod(sigma)),
        constraints=[{"type": "eq", "fun": lambda d: np.prod(d) - 1.0}],
        method="SLSQP", options={"ftol": 1e-14, "maxiter": 200})
    return res.x


def test_volume_projection_fixed_point():
    F = np.diag([2.0, 0.5, 1.0])  # det already 1
    M, flagged = volume_projections(F)
    assert not flagged
    assert np.abs(M - F).max() < 1e-10


def test_volume_projection_uniform_stretch_matches_oracle():
    M, _ = volume_projections(2.0 * np.eye(3))
    d_oracle = _volume_oracle(np.array([2.0, 2.0, 2.0]))
    assert np.abs(np.sort(np.linalg.svd(M)[1]) - np.sort(d_oracle)).max() < 1e-8
    assert abs(np.linalg.det(M) - 1.0) < 1e-10
    # uniform case: all singular values equal 1
    assert np.abs(M - np.eye(3)).max() < 1e-10


def test_volume_projection_random_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        F = np.eye(3) + 0.5 * rng.normal(size=(3, 3))
        if np.linalg.det(F) <= 0.05:
            continue
        M, _ = volume_projections(F)
        s = np.linalg.svd(F)[1]
        d_oracle = _volume_oracle(s)
        assert np.abs(np.sort(np.linalg.svd(M)[1]) - np.sort(d_oracle)).max() < 1e-6
        assert abs(np.linalg.det(M) - 1.0) < 1e-9


def test_volume_projection_inverted_flagged_and_clamped():
    F = np.diag([1.0, 1.0, -0.5])
    M, flagged = volume_projections(F)
    assert flagged
    assert abs(np.linalg.det(M) - 1.0) < 1e-9


def test_project_volume_via_system():
    system, rest, _ = disc_fixture()
    M = project_volume(system, system.mesh.vertices, 3)
    assert np.abs(M - np.eye(3)).max() < 1e-10


# ---------------------------------------------------------------------------
# quasistatic solve
# ---------------------------------------------------------------------------

def test_rest_equilibrium_fixed_point():
    system, rest, _ = disc_fixture()
    res = quasistatic_solve(system, rest, num_iterations=10)
    assert np.abs(res.positions - system.mesh.vertices).max() < 1e-10


def test_rigid_translation_tracks_attachments():
    system, rest, _ = disc_fixture()
    offset = np.array([0.01, 0.0, 0.0])
    res = quasistatic_solve(system, rest + offset, num_iterations=400, tol=1e-13)
    disp = res.positions - system.mesh.vertices
    assert np.abs(disp - offset).max() < 1e-6


def test_axial_compression_preserves_volume():
    system, rest, n_top = disc_fixture(volume=5e7)
    targets = rest.copy()
    targets[:n_top, 1] -= 0.002  # 20% of the 0.01 m disc height
    res = quasistatic_solve(system, targets, num_iterations=600, tol=1e-14)
    v0 = system.mesh.total_volume()
    v1 = system.mesh.total_volume(res.positions)
    assert abs(v1 - v0) / v0 < 0.02
    # disc bulges laterally
    w0 = np.ptp(system.mesh.vertices[:, 0])
    assert np.ptp(res.positions[:, 0]) > w0


def test_energy_monotone_nonincreasing():
    system, rest, n_top = disc_fixture()
    targets = rest.copy()
    targets[:n_top] += np.array([0.003, -0.002, 0.001])
    res = quasistatic_solve(system, targets, num_iterations=30, track_energy=True)
    es = np.array(res.energies)
    assert np.all(np.diff(es) <= 1e-9)


def test_non_finite_reported_with_iteration():
    system, rest, _ = disc_fixture()
    from torsim.fem import FemDivergenceError
    with pytest.raises((FemDivergenceError, ValueError)):
        quasistatic_solve(system, rest * np.nan, num_iterations=3)


def test_determinism_bit_identical():
    system, rest, n_top = disc_fixture()
    targets = rest.copy()
    targets[:n_top, 0] += 0.004
    a = quasistatic_solve(system, targets, num_iterations=8).positions
    b = quasistatic_solve(system, targets, num_iterations=8).positions
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# coupling force
# ---------------------------------------------------------------------------

def test_coupling_force_zero_at_match():
    system, rest, _ = disc_fixture()
    f = coupling_force(system, system.mesh.vertices, rest)
    assert np.abs(f).max() == 0.0


def test_coupling_force_linear_law():
    mesh = regular_tet_mesh()
    system = build_disc_system(mesh, 1e6, 1e6, 1000.0, [(0, 0, mesh.vertices[0])])
    P = mesh.vertices[:1] - np.array([0.0, 0.001, 0.0])
    f = coupling_force(system, mesh.vertices, P)
    assert np.allclose(f, [[0.0, 1.0, 0.0]])


def test_coupling_force_is_minus_gradient_wrt_bone_points():
    system, rest, _ = disc_fixture()
    rng = np.random.default_rng(3)
    x = system.mesh.vertices + rng.normal(size=(system.mesh.num_vertices, 3)) * 1e-3
    P = rest + rng.normal(size=rest.shape) * 1e-3
    f = coupling_force(system, x, P)

    def epos(Pflat):
        return variational_energy(system, x, Pflat.reshape(-1, 3),
                                  include=("attachment",))

    eps = 1e-7
    for idx in [(0, 0), (3, 1), (7, 2)]:
        Pp = P.copy(); Pp[idx] += eps
        Pm = P.copy(); Pm[idx] -= eps
        fd = -(epos(Pp.ravel()) - epos(Pm.ravel())) / (2 * eps)
        assert abs(f[idx] - fd) / max(abs(fd), 1e-9) < 1e-5


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

@given(st.lists(st.floats(-2.0, 2.0), min_size=3, max_size=3),
       st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
@settings(max_examples=25, deadline=None)
def test_rigid_motion_invariance(wvec, tvec):
    system, rest, n_top = disc_fixture()
    rng = np.random.default_rng(11)
    x = system.mesh.vertices + rng.normal(size=(system.mesh.num_vertices, 3)) * 1e-3
    P = rest + rng.normal(size=rest.shape) * 1e-3
    R = exp_rotvec(np.array(wvec))
    t = np.array(tvec)
    e1 = variational_energy(system, x, P)
    e2 = variational_energy(system, x @ R.T + t, P @ R.T + t)
    assert abs(e1 - e2) / max(abs(e1), 1e-16) < 1e-8


@pytest.mark.parametrize("kind", ["corotational_elastic", "volume_preserve",
                                  "attachment"])
def test_gradient_consistency_per_kind(kind):
    system, rest, _ = disc_fixture()
    rng = np.random.default_rng(5)
    x = system.mesh.vertices + rng.normal(size=(system.mesh.num_vertices, 3)) * 8e-4
    P = rest
    g = energy_gradient(system, x, P, include=(kind,))
    eps = 1e-6
    for idx in [(2, 0), (10, 1), (20, 2)]:
        xp = x.copy(); xp[idx] += eps
        xm = x.copy(); xm[idx] -= eps
        fd = (variational_energy(system, xp, P, include=(kind,))
              - variational_energy(system, xm, P, include=(kind,))) / (2 * eps)
        denom = max(abs(fd), np.abs(g).max() * 1e-6, 1e-12)
        assert abs(g[idx] - fd) / denom < 1e-4
