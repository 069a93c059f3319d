import numpy as np
import pytest

from torsim.tetmesh import (DegenerateTetError, TetMesh,
                            build_elliptical_prism_mesh, load_tet_mesh,
                            save_tet_mesh)
from scenes import regular_tet_mesh


def test_regular_tet_rest_state():
    mesh = regular_tet_mesh()
    assert mesh.num_tets == 1
    assert mesh.rest_volume[0] > 0
    # inverse basis times edge matrix is the identity
    prod = mesh.edge_matrices(mesh.vertices) @ mesh.rest_inverse_basis
    assert np.abs(prod - np.eye(3)).max() < 1e-10
    # a lone tet is all surface
    assert list(mesh.boundary_vertex_ids) == [0, 1, 2, 3]


def test_orientation_fixup():
    mesh = regular_tet_mesh()
    swapped = TetMesh(vertices=mesh.vertices, tets=mesh.tets[:, [0, 1, 3, 2]])
    assert swapped.rest_volume[0] > 0


def test_degenerate_tet_rejected_with_index():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0.5, 0.0]], dtype=float)
    with pytest.raises(DegenerateTetError) as exc:
        TetMesh(vertices=verts, tets=np.array([[0, 1, 2, 3]]))
    assert exc.value.tet_index == 0


def test_prism_mesh_volume_and_validity():
    a, b, h = 0.02, 0.015, 0.01
    mesh = build_elliptical_prism_mesh(a, b, h, divisions=(4, 4, 2))
    assert np.all(mesh.rest_volume > 0)
    # squircle-mapped grid approximates the elliptical prism volume
    vol = mesh.total_volume()
    assert abs(vol - np.pi * a * b * h) / (np.pi * a * b * h) < 0.08
    # boundary contains the extreme-y layers
    ys = mesh.vertices[mesh.boundary_vertex_ids, 1]
    assert ys.min() == mesh.vertices[:, 1].min()
    assert ys.max() == mesh.vertices[:, 1].max()


def test_prism_mesh_is_conforming():
    # every interior face must be shared by exactly two tets
    mesh = build_elliptical_prism_mesh(0.02, 0.015, 0.01, divisions=(3, 3, 2))
    faces = {}
    for tet in mesh.tets:
        for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
            key = tuple(sorted(int(tet[i]) for i in tri))
            faces[key] = faces.get(key, 0) + 1
    assert set(faces.values()) <= {1, 2}


def test_node_ele_roundtrip(tmp_path):
    mesh = build_elliptical_prism_mesh(0.02, 0.015, 0.01, divisions=(2, 2, 1))
    node = tmp_path / "disc.node"
    ele = tmp_path / "disc.ele"
    save_tet_mesh(mesh, node, ele)
    mesh2 = load_tet_mesh(node, ele)
    assert np.array_equal(mesh.tets, mesh2.tets)
    assert np.abs(mesh.vertices - mesh2.vertices).max() < 1e-15


def test_deformation_gradient_identity_at_rest():
    mesh = build_elliptical_prism_mesh(0.02, 0.015, 0.01, divisions=(2, 2, 1))
    F = mesh.deformation_gradients(mesh.vertices)
    assert np.abs(F - np.eye(3)).max() < 1e-10
