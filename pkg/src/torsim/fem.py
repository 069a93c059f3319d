"""Quasi-static projective finite elements for intervertebral discs.

Each disc is simulated by alternating local projections with a prefactored
global linear solve.  The energies are corotational elasticity (projection of
the deformation gradient onto rotations), volume preservation (projection of
singular values onto the unit-determinant manifold), and positional
attachments that couple boundary vertices to points on the bones.

Because the per-coordinate structure of the elemental energies decouples, the
global matrix is assembled once as a k x k scalar matrix and the solve is a
single Cholesky back-substitution with three right-hand-side columns.

Units are SI: positions in m, elastic weights in N/m^2, attachment weights in
N/m, energies in J.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .tetmesh import TetMesh

DEFAULT_FEM_ITERATIONS = 10
DEFAULT_FEM_TOL = 1e-6


class SingularSystemError(ValueError):
    """The global matrix has a null space (no attachment pins the disc)."""


class FemDivergenceError(RuntimeError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"non-finite disc positions at iteration {iteration}")


@dataclass(frozen=True)
class Attachment:
    """Coupling between a disc boundary vertex and a point on a bone."""

    vertex_id: int
    body_id: int
    body_local_point: np.ndarray
    weight: float


@dataclass(frozen=True)
class ElementSelector:
    """Maps stacked nodal positions to a tet's deformation gradient."""

    tet_index: int
    vertex_ids: tuple
    gradient: np.ndarray  # (3, 4), rows are deformation-gradient columns

    def apply(self, positions):
        x = np.asarray(positions).reshape(-1, 3)
        return (self.gradient @ x[list(self.vertex_ids)]).T  # F, (3, 3)


@dataclass(frozen=True)
class VertexSelector:
    """Picks a single attached vertex position."""

    vertex_id: int

    def apply(self, positions):
        return np.asarray(positions).reshape(-1, 3)[self.vertex_id]


@dataclass(frozen=True)
class EnergyTerm:
    kind: str  # corotational_elastic | volume_preserve | attachment
    weight: float
    selector: object

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"{self.kind} energy weight must be > 0")


@dataclass
class DiscSystem:
    """Immutable disc simulation system (share freely across threads)."""

    mesh: TetMesh
    energies: list
    attachments: list
    elastic_weight: float
    volume_weight: float
    # packed arrays used by the solver
    gradients: np.ndarray = field(repr=False)          # (T, 3, 4)
    elastic_weights: np.ndarray = field(repr=False)    # (T,) weight*volume
    volume_weights: np.ndarray = field(repr=False)     # (T,)
    attach_vertex_ids: np.ndarray = field(repr=False)  # (A,)
    attach_weights: np.ndarray = field(repr=False)     # (A,)
    global_matrix: np.ndarray = field(repr=False)      # (k, k) scalar L
    global_matrix_factorization: tuple = field(repr=False)

    @property
    def num_dof(self):
        return 3 * self.mesh.num_vertices

    def solve_global(self, rhs_columns):
        """x = L^-1 d for a (k, 3) right-hand side."""
        return scipy.linalg.cho_solve(self.global_matrix_factorization, rhs_columns)

    def full_global_matrix(self):
        """The 3k x 3k operator (coordinates decouple, so L is stored k x k)."""
        return np.kron(self.global_matrix, np.eye(3))


def build_disc_system(mesh, elastic_weight, volume_weight, attach_weight, attachments):
    """Assemble and prefactor the disc system.

    `attachments` is a sequence of (disc boundary vertex id, bone id,
    bone-local point) triples, or Attachment instances.  The factorization is
    computed once; the selectors are constant so it is reused by every step.
    """
    if elastic_weight <= 0 or volume_weight <= 0 or attach_weight <= 0:
        raise ValueError("energy weights must be positive")
    atts = []
    for a in attachments:
        if isinstance(a, Attachment):
            atts.append(a)
        else:
            vid, body, local = a
            atts.append(Attachment(int(vid), int(body), np.asarray(local, float),
                                   float(attach_weight)))
    if not atts:
        raise SingularSystemError(
            "singular system: disc has no attachments to remove the null space")
    boundary = set(int(i) for i in mesh.boundary_vertex_ids)
    for a in atts:
        if a.vertex_id not in boundary:
            raise ValueError(f"attachment vertex {a.vertex_id} is not on the surface")

    T = mesh.num_tets
    k = mesh.num_vertices
    # per-tet gradient blocks: F[a, b] = (G @ x_a)[b] for the four tet vertices
    Bm = mesh.rest_inverse_basis  # (T, 3, 3)
    G = np.zeros((T, 3, 4))
    G[:, :, 1:] = np.transpose(Bm, (0, 2, 1))
    G[:, :, 0] = -G[:, :, 1:].sum(axis=2)

    w_el = elastic_weight * mesh.rest_volume
    w_vol = volume_weight * mesh.rest_volume

    L = np.zeros((k, k))
    GtG = np.einsum("tbi,tbj->tij", G, G)  # (T, 4, 4)
    w = w_el + w_vol
    for t in range(T):
        ids = mesh.tets[t]
        L[np.ix_(ids, ids)] += w[t] * GtG[t]
    att_ids = np.array([a.vertex_id for a in atts], dtype=np.int64)
    att_w = np.array([a.weight for a in atts])
    np.add.at(np.reshape(L, (k * k,)), att_ids * k + att_ids, att_w)

    try:
        factor = scipy.linalg.cho_factor(L)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise SingularSystemError(f"singular system: {exc}") from exc
    # cho_factor succeeds on some semidefinite inputs; verify conditioning
    if not np.all(np.isfinite(factor[0])) or np.min(np.abs(np.diag(factor[0]))) < 1e-12:
        raise SingularSystemError("singular system: global matrix is not SPD")

    energies = []
    for t in range(T):
        sel = ElementSelector(t, tuple(int(v) for v in mesh.tets[t]), G[t])
        energies.append(EnergyTerm("corotational_elastic", float(w_el[t]), sel))
        energies.append(EnergyTerm("volume_preserve", float(w_vol[t]), sel))
    for a in atts:
        energies.append(EnergyTerm("attachment", a.weight, VertexSelector(a.vertex_id)))

    return DiscSystem(
        mesh=mesh,
        energies=energies,
        attachments=atts,
        elastic_weight=float(elastic_weight),
        volume_weight=float(volume_weight),
        gradients=G,
        elastic_weights=w_el,
        volume_weights=w_vol,
        attach_vertex_ids=att_ids,
        attach_weights=att_w,
        global_matrix=L,
        global_matrix_factorization=factor,
    )


# ---------------------------------------------------------------------------
# local projections
# ---------------------------------------------------------------------------

def rotation_projections(F, prev_rotations=None):
    """Closest rotations to a (T, 3, 3) stack of deformation gradients.

    Reflections are corrected by flipping the singular vector paired with the
    smallest singular value.  Numerically singular gradients fall back to the
    previous step's rotation (identity when none is supplied).
    """
    F = np.asarray(F, dtype=float)
    single = F.ndim == 2
    if single:
        F = F[None]
    R = np.empty_like(F)
    U, s, Vt = np.linalg.svd(F)
    det = np.linalg.det(U @ Vt)
    flip = det < 0
    U = U.copy()
    U[flip, :, 2] *= -1.0
    R[:] = U @ Vt
    bad = ~np.isfinite(s).all(axis=1) | (s[:, 0] < 1e-12)
    if np.any(bad):
        if prev_rotations is None:
            R[bad] = np.eye(3)
        else:
            R[bad] = np.asarray(prev_rotations)[bad]
    return R[0] if single else R


def project_corotational(system, positions, tet_index, prev_rotation=None):
    """Rotation factor of the polar decomposition of tet `tet_index`'s F."""
    F = system.mesh.deformation_gradients(positions)[tet_index]
    prev = None if prev_rotation is None else np.asarray(prev_rotation)[None]
    return rotation_projections(F[None], prev)[0]


def volume_projections(F, max_newton_iters=10, min_singular_value=0.01):
    """Closest (Frobenius) matrices to F with unit determinant.

    Projects the singular values onto the product-one manifold with a small
    Newton iteration.  Inverted gradients (det <= 0) are reflection-corrected
    and their singular values clamped before projecting; the returned mask
    flags those elements.
    """
    F = np.asarray(F, dtype=float)
    single = F.ndim == 2
    if single:
        F = F[None]
    U, s, Vt = np.linalg.svd(F)
    det = np.linalg.det(U @ Vt)
    flip = det < 0
    U = U.copy()
    U[flip, :, 2] *= -1.0
    flagged = np.linalg.det(F) <= 0.0
    s = np.maximum(s, np.where(flagged[:, None], min_singular_value, 0.0))
    d = project_singular_values_to_unit_product(s, max_newton_iters)
    M = U @ (d[:, :, None] * Vt)
    if single:
        return M[0], bool(flagged[0])
    return M, flagged


def project_singular_values_to_unit_product(sigma, max_iters=10):
    """Nearest point (Euclidean) on {d : d1*d2*d3 = 1} to each row of sigma."""
    sigma = np.asarray(sigma, dtype=float)
    prod = np.prod(sigma, axis=1)
    d = sigma * np.cbrt(1.0 / np.maximum(prod, 1e-30))[:, None]
    lam = np.zeros(len(sigma))
    for _ in range(max_iters):
        p = np.prod(d, axis=1)
        pd = p[:, None] / d  # dP/dd_i = prod of the other two
        r1 = d - sigma - lam[:, None] * pd
        r2 = p - 1.0
        if max(np.abs(r1).max(initial=0.0), np.abs(r2).max(initial=0.0)) < 1e-13:
            break
        # assemble per-row 4x4 KKT Jacobians
        n = len(sigma)
        Jac = np.zeros((n, 4, 4))
        Jac[:, 0, 0] = Jac[:, 1, 1] = Jac[:, 2, 2] = 1.0
        Jac[:, 0, 1] = -lam * d[:, 2]
        Jac[:, 0, 2] = -lam * d[:, 1]
        Jac[:, 1, 0] = -lam * d[:, 2]
        Jac[:, 1, 2] = -lam * d[:, 0]
        Jac[:, 2, 0] = -lam * d[:, 1]
        Jac[:, 2, 1] = -lam * d[:, 0]
        Jac[:, :3, 3] = -pd
        Jac[:, 3, :3] = pd
        rhs = np.concatenate([-r1, -r2[:, None]], axis=1)
        try:
            delta = np.linalg.solve(Jac, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            delta = np.stack([np.linalg.lstsq(Jac[t], rhs[t], rcond=None)[0]
                              for t in range(len(sigma))])
        d = d + delta[:, :3]
        lam = lam + delta[:, 3]
        d = np.maximum(d, 1e-6)
    return d


def project_volume(system, positions, tet_index):
    """Unit-determinant projection of tet `tet_index`'s deformation gradient."""
    F = system.mesh.deformation_gradients(positions)[tet_index]
    M, _ = volume_projections(F)
    return M


# ---------------------------------------------------------------------------
# energies and the quasi-static solve
# ---------------------------------------------------------------------------

def _elemental_targets(system, positions, prev_rotations=None):
    F = system.mesh.deformation_gradients(positions)
    R = rotation_projections(F, prev_rotations)
    V, _ = volume_projections(F)
    return F, R, V


_ALL_KINDS = ("corotational_elastic", "volume_preserve", "attachment")


def variational_energy(system, positions, bone_attach_points_world,
                       prev_rotations=None, include=_ALL_KINDS):
    """Total projective energy at `positions` with optimal local targets."""
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    F, R, V = _elemental_targets(system, x, prev_rotations)
    e = 0.0
    if "corotational_elastic" in include:
        e += 0.5 * np.sum(system.elastic_weights * np.sum((F - R) ** 2, axis=(1, 2)))
    if "volume_preserve" in include:
        e += 0.5 * np.sum(system.volume_weights * np.sum((F - V) ** 2, axis=(1, 2)))
    if "attachment" in include:
        P = np.asarray(bone_attach_points_world, dtype=float).reshape(-1, 3)
        diff = x[system.attach_vertex_ids] - P
        e += 0.5 * np.sum(system.attach_weights * np.sum(diff ** 2, axis=1))
    return float(e)


def energy_gradient(system, positions, bone_attach_points_world,
                    prev_rotations=None, include=_ALL_KINDS):
    """Gradient of the variational energy w.r.t. nodal positions, (k, 3)."""
    x = np.asarray(positions, dtype=float).reshape(-1, 3)
    F, R, V = _elemental_targets(system, x, prev_rotations)
    grad = np.zeros_like(x)
    G = system.gradients
    resid = np.zeros_like(F)
    if "corotational_elastic" in include:
        resid += system.elastic_weights[:, None, None] * (F - R)
    if "volume_preserve" in include:
        resid += system.volume_weights[:, None, None] * (F - V)
    # per-coordinate row a: w * G^T (G x_a - m[a, :]) -> scatter G^T resid^T
    contrib = np.einsum("tbi,tab->tia", G, resid)  # (T, 4, 3)
    np.add.at(grad, system.mesh.tets, contrib)
    if "attachment" in include:
        P = np.asarray(bone_attach_points_world, dtype=float).reshape(-1, 3)
        np.add.at(grad, system.attach_vertex_ids,
                  system.attach_weights[:, None] * (x[system.attach_vertex_ids] - P))
    return grad


@dataclass
class QuasistaticResult:
    positions: np.ndarray
    energies: list
    iterations: int
    converged: bool
    flagged_tets: int = 0


def quasistatic_solve(system, bone_attach_points_world,
                      num_iterations=DEFAULT_FEM_ITERATIONS, x0=None,
                      tol=DEFAULT_FEM_TOL, track_energy=False):
    """Alternate local projections with the prefactored global solve.

    `bone_attach_points_world` holds one 3D point per attachment (the bone
    side of each coupling, in world frame).  Starts from `x0` (rest positions
    when omitted) and early-exits once the relative change in x drops below
    `tol`.  The variational objective is non-increasing across iterations.
    """
    mesh = system.mesh
    P = np.asarray(bone_attach_points_world, dtype=float).reshape(-1, 3)
    if len(P) != len(system.attach_vertex_ids):
        raise ValueError("one bone point required per attachment")
    x = np.array(mesh.vertices if x0 is None else x0, dtype=float).reshape(-1, 3)
    prev_R = None
    energies = []
    att_rhs_ids = system.attach_vertex_ids
    att_rhs = system.attach_weights[:, None] * P
    G = system.gradients
    iterations = 0
    converged = False
    flagged_total = 0
    for it in range(num_iterations):
        F = mesh.deformation_gradients(x)
        # one SVD serves both local projections
        U, sig, Vt = np.linalg.svd(F)
        det = np.linalg.det(U @ Vt)
        Uc = U.copy()
        Uc[det < 0, :, 2] *= -1.0
        R = Uc @ Vt
        bad = ~np.isfinite(sig).all(axis=1) | (sig[:, 0] < 1e-12)
        if np.any(bad):
            R[bad] = np.eye(3) if prev_R is None else prev_R[bad]
        flagged = np.linalg.det(F) <= 0.0
        sigc = np.maximum(sig, np.where(flagged[:, None], 0.01, 0.0))
        dvals = project_singular_values_to_unit_product(sigc)
        V = Uc @ (dvals[:, :, None] * Vt)
        prev_R = R
        flagged_total += int(np.count_nonzero(flagged))
        # d = sum_i w_i A_i^T m_i, assembled per coordinate column
        target = (system.elastic_weights[:, None, None] * R
                  + system.volume_weights[:, None, None] * V)
        rhs = np.zeros_like(x)
        contrib = np.einsum("tbi,tab->tia", G, target)  # (T, 4, 3)
        np.add.at(rhs, mesh.tets, contrib)
        np.add.at(rhs, att_rhs_ids, att_rhs)
        x_new = system.solve_global(rhs)
        if not np.all(np.isfinite(x_new)):
            raise FemDivergenceError(it)
        if track_energy:
            energies.append(variational_energy(system, x_new, P, prev_R))
        delta = np.linalg.norm(x_new - x)
        scale = max(np.linalg.norm(x), 1e-12)
        x = x_new
        iterations = it + 1
        if delta / scale < tol:
            converged = True
            break
    return QuasistaticResult(positions=x, energies=energies, iterations=iterations,
                             converged=converged, flagged_tets=flagged_total)


def coupling_force(system, disc_positions, bone_attach_points_world):
    """Per-attachment force on the bone points, pulling them toward the disc.

    force_a = weight_a * (x_Ba - P_a); the equal and opposite force acts on
    the disc vertex (Newton's third law at the coupling).
    """
    x = np.asarray(disc_positions, dtype=float).reshape(-1, 3)
    P = np.asarray(bone_attach_points_world, dtype=float).reshape(-1, 3)
    if len(x) == len(system.mesh.vertices):
        xb = x[system.attach_vertex_ids]
    elif len(x) == len(system.attach_vertex_ids):
        xb = x
    else:
        raise ValueError("disc_positions must be full nodal or per-attachment")
    if len(P) != len(system.attach_vertex_ids):
        raise ValueError("one bone point required per attachment")
    return system.attach_weights[:, None] * (xb - P)


def attachment_rest_points(system):
    """Rest-pose world positions of the attached disc vertices."""
    return system.mesh.vertices[system.attach_vertex_ids].copy()
