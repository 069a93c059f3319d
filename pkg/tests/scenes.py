"""Shared test scenes: small meshes, disc systems, and rigid chains."""

import numpy as np

from torsim.fem import build_disc_system
from torsim.skeleton import BALL3, Body, SkeletonModel
from torsim.tetmesh import TetMesh, build_elliptical_prism_mesh


def regular_tet_mesh(scale=0.01):
    verts = scale * np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.5, np.sqrt(3.0) / 2.0, 0.0],
        [0.5, np.sqrt(3.0) / 6.0, np.sqrt(2.0 / 3.0)],
    ])
    return TetMesh(vertices=verts, tets=np.array([[0, 1, 2, 3]]))


def disc_fixture(divisions=(3, 3, 2), elastic=1e6, volume=1e6, attach=1e4):
    """Small disc with top face attached to bone 0 and bottom to bone 1."""
    mesh = build_elliptical_prism_mesh(0.02, 0.015, 0.01, divisions=divisions)
    ymax = mesh.vertices[:, 1].max()
    ymin = mesh.vertices[:, 1].min()
    top = [int(i) for i in mesh.boundary_vertex_ids if mesh.vertices[i, 1] > ymax - 1e-9]
    bot = [int(i) for i in mesh.boundary_vertex_ids if mesh.vertices[i, 1] < ymin + 1e-9]
    atts = ([(i, 0, mesh.vertices[i]) for i in top]
            + [(i, 1, mesh.vertices[i]) for i in bot])
    system = build_disc_system(mesh, elastic, volume, attach, atts)
    rest_targets = mesh.vertices[system.attach_vertex_ids].copy()
    return system, rest_targets, len(top)


def ball_chain(num_bodies=3, gravity=(0.0, -9.81, 0.0), link=0.25):
    """Free root plus ball-jointed links, slightly asymmetric inertia."""
    bodies = [Body("b0", 1.2, np.diag([0.011, 0.019, 0.027]), -1,
                   com=np.array([0.01, 0.08, 0.0]))]
    for k in range(1, num_bodies):
        T = np.eye(4)
        T[:3, 3] = [0.02, link, 0.0]
        bodies.append(Body(f"b{k}", 0.8, np.diag([0.009, 0.014, 0.011]), k - 1,
                           joint_type=BALL3, joint_transform=T,
                           com=np.array([0.0, 0.09, 0.02])))
    return SkeletonModel(bodies, gravity=gravity)


def pendulum_rod(length=0.8, mass=1.3):
    """Uniform slender rod, ball joint at its upper end, hanging along -y."""
    inertia = np.diag([mass * length**2 / 12.0, 1e-6, mass * length**2 / 12.0])
    rod = Body("rod", mass, inertia, -1, joint_type=BALL3,
               com=np.array([0.0, -length / 2.0, 0.0]))
    return SkeletonModel([rod])
