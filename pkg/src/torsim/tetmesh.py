"""Tetrahedral meshes for the disc simulation.

A TetMesh stores rest-state quantities needed by the projective solver:
per-tet inverse rest edge bases, rest volumes, and the set of surface
vertices eligible for bone attachment.

Meshes come from two sources: the built-in structured tetrahedralization of
an extruded elliptical prism (five tets per hexahedral cell), or plain-text
node/ele files (0-based indices, whitespace separated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_TET_VOLUME = 1e-12  # m^3, below this a tet is degenerate


class DegenerateTetError(ValueError):
    """Raised when a tet has (near) zero or negative rest volume."""

    def __init__(self, tet_index, volume):
        self.tet_index = tet_index
        self.volume = volume
        super().__init__(f"degenerate tet {tet_index}: rest volume {volume:.3e} m^3")


@dataclass
class TetMesh:
    """Tetrahedralized geometry with precomputed rest state.

    vertices: (k, 3) rest positions in meters.
    tets: (T, 4) vertex indices, positively oriented.
    rest_inverse_basis: (T, 3, 3) inverse rest edge matrices.
    rest_volume: (T,) rest volumes in m^3.
    boundary_vertex_ids: sorted indices of surface vertices.
    """

    vertices: np.ndarray
    tets: np.ndarray
    rest_inverse_basis: np.ndarray = field(default=None, repr=False)
    rest_volume: np.ndarray = field(default=None, repr=False)
    boundary_vertex_ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise ValueError("tets must be (T, 4)")
        k = len(self.vertices)
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= k):
            raise ValueError("tet vertex index out of range")
        if self.rest_inverse_basis is None:
            self._precompute_rest_state()

    def _precompute_rest_state(self):
        edges = self.edge_matrices(self.vertices)
        vols = np.linalg.det(edges) / 6.0
        # fix inverted tets by swapping two vertices
        flipped = vols < 0
        if np.any(flipped):
            self.tets = self.tets.copy()
            self.tets[flipped, 2], self.tets[flipped, 3] = (
                self.tets[flipped, 3].copy(),
                self.tets[flipped, 2].copy(),
            )
            edges = self.edge_matrices(self.vertices)
            vols = np.linalg.det(edges) / 6.0
        bad = np.nonzero(vols < MIN_TET_VOLUME)[0]
        if bad.size:
            raise DegenerateTetError(int(bad[0]), float(vols[bad[0]]))
        self.rest_volume = vols
        self.rest_inverse_basis = np.linalg.inv(edges)
        self.boundary_vertex_ids = self._surface_vertices()

    def edge_matrices(self, positions):
        """(T, 3, 3) matrices whose columns are the three edges from vertex 0."""
        x = np.asarray(positions, dtype=float).reshape(-1, 3)
        p = x[self.tets]  # (T, 4, 3)
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)

    def deformation_gradients(self, positions):
        """Per-tet deformation gradients F = Ds @ Bm for given positions."""
        return self.edge_matrices(positions) @ self.rest_inverse_basis

    def _surface_vertices(self):
        faces = {}
        local = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
        for tet in self.tets:
            for a, b, c in local:
                key = tuple(sorted((int(tet[a]), int(tet[b]), int(tet[c]))))
                faces[key] = faces.get(key, 0) + 1
        surf = set()
        for key, count in faces.items():
            if count == 1:
                surf.update(key)
        return np.array(sorted(surf), dtype=np.int64)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_tets(self):
        return len(self.tets)

    def total_volume(self, positions=None):
        if positions is None:
            return float(np.sum(self.rest_volume))
        return float(np.sum(np.linalg.det(self.edge_matrices(positions)) / 6.0))


# five-tet decomposition of a hexahedral cell; corners indexed by (dx, dy, dz)
# bits as c = dx + 2*dy + 4*dz.  The parity-flipped variant mirrors the
# diagonal so adjacent cells share matching face diagonals.
_FIVE_TETS_EVEN = (
    (0, 1, 2, 4),
    (1, 2, 3, 7),
    (1, 4, 5, 7),
    (2, 4, 6, 7),
    (1, 2, 4, 7),
)
_FIVE_TETS_ODD = (
    (0, 1, 3, 5),
    (0, 2, 3, 6),
    (0, 4, 5, 6),
    (3, 5, 6, 7),
    (0, 3, 5, 6),
)


def build_elliptical_prism_mesh(semi_axis_x, semi_axis_z, height, divisions=(3, 3, 2),
                                center=(0.0, 0.0, 0.0)):
    """Structured tet mesh of an extruded elliptical prism (the disc shape).

    The unit square cross-section is mapped onto the ellipse with the smooth
    squircle map, which keeps all cells positively oriented.  `divisions` is
    (nx, nz, nlayers); the prism is extruded along +y from y=0 to y=height and
    then shifted by `center` (center refers to the prism mid-height point).
    """
    nx, nz, ny = divisions
    xs = np.linspace(-1.0, 1.0, nx + 1)
    zs = np.linspace(-1.0, 1.0, nz + 1)
    ys = np.linspace(0.0, height, ny + 1)

    def vid(i, j, k):
        return (k * (nz + 1) + j) * (nx + 1) + i

    verts = np.zeros(((nx + 1) * (nz + 1) * (ny + 1), 3))
    for k, y in enumerate(ys):
        for j, z in enumerate(zs):
            for i, x in enumerate(xs):
                # square -> unit disc (squircle), then scale to the ellipse
                u = x * np.sqrt(max(1.0 - 0.5 * z * z, 0.0))
                w = z * np.sqrt(max(1.0 - 0.5 * x * x, 0.0))
                verts[vid(i, j, k)] = (semi_axis_x * u, y, semi_axis_z * w)
    verts[:, 0] += center[0]
    verts[:, 1] += center[1] - 0.5 * height
    verts[:, 2] += center[2]

    tets = []
    for k in range(ny):
        for j in range(nz):
            for i in range(nx):
                corners = [vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))
                           for c in range(8)]
                pattern = _FIVE_TETS_EVEN if (i + j + k) % 2 == 0 else _FIVE_TETS_ODD
                for tet in pattern:
                    tets.append([corners[c] for c in tet])
    return TetMesh(vertices=verts, tets=np.array(tets, dtype=np.int64))


def load_tet_mesh(node_path, ele_path):
    """Load a mesh from plain-text node/ele files.

    node file: first token is the vertex count, then lines "id x y z".
    ele file: first token is the tet count, then lines "id v0 v1 v2 v3".
    Indices are 0-based.  Extra tokens on the count line are ignored.
    """
    node_tokens = _read_tokens(node_path)
    n = int(node_tokens[0])
    vals = node_tokens[1:]
    if len(vals) < 4 * n:
        raise ValueError(f"node file {node_path}: expected {n} vertices")
    verts = np.array(vals[: 4 * n], dtype=float).reshape(n, 4)[:, 1:4]

    ele_tokens = _read_tokens(ele_path)
    t = int(ele_tokens[0])
    vals = ele_tokens[1:]
    if len(vals) < 5 * t:
        raise ValueError(f"ele file {ele_path}: expected {t} tets")
    tets = np.array(vals[: 5 * t], dtype=float).astype(np.int64).reshape(t, 5)[:, 1:5]
    return TetMesh(vertices=verts, tets=tets)


def save_tet_mesh(mesh, node_path, ele_path):
    with open(node_path, "w") as f:
        f.write(f"{mesh.num_vertices}\n")
        for i, v in enumerate(mesh.vertices):
            f.write(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
    with open(ele_path, "w") as f:
        f.write(f"{mesh.num_tets}\n")
        for i, t in enumerate(mesh.tets):
            f.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


def _read_tokens(path):
    with open(path) as f:
        return f.read().split()
