"""Ligament, facet, contact, and anchor constraints at the velocity level.

Ligaments are piecewise-linear segments with per-segment maximum lengths,
enforced as unilateral rows on the squared length (smooth Jacobians).  Facets
constrain follower points to a band around an ellipsoid level set, one
unilateral row per crossed band edge.  Ground contacts add a non-penetration
row plus boxed Coulomb friction rows.  Anchors are bilateral servo rows used
for welds and the swing bar.

Active rows are selected by one-step prediction, assembled into an
effective-mass LCP (A = J M^-1 J^T) with Baumgarte bias, solved by the
Dantzig solver (projected Gauss-Seidel on pivot failure), and the resulting
impulses correct the generalized velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import skeleton as sk
from .lcp import LcpError, LcpProblem, complementarity_residual, solve_lcp, solve_lcp_pgs
from .so3 import log_rotmat

DEFAULT_BAUMGARTE = 0.2
LIGAMENT_ACTIVATION_MARGIN = 1e-4   # m, on predicted length violation
FACET_ACTIVATION_MARGIN = 5e-3      # dimensionless, on predicted C
CONTACT_ACTIVATION_MARGIN = 1e-3    # m


# ---------------------------------------------------------------------------
# constraint definitions
# ---------------------------------------------------------------------------

@dataclass
class LigamentSegment:
    body_a: int
    local_a: np.ndarray
    body_b: int
    local_b: np.ndarray
    l_max: float

    def __post_init__(self):
        self.local_a = np.asarray(self.local_a, dtype=float)
        self.local_b = np.asarray(self.local_b, dtype=float)
        if self.l_max <= 0:
            raise ValueError("l_max must be > 0")


@dataclass
class LigamentPath:
    """One ligament routed through waypoints; each span is a segment."""

    name: str
    segments: list
    dof_class: str = "coupled"  # sagittal | lateral | axial | coupled

    def __post_init__(self):
        if not self.segments:
            raise ValueError(f"ligament {self.name} needs at least one segment")

    def rest_lengths(self, model, q=None):
        kin = sk.Kinematics(model, np.zeros(model.num_dof) if q is None else q)
        out = []
        for s in self.segments:
            pa = sk.world_point(kin.T[s.body_a], s.local_a)
            pb = sk.world_point(kin.T[s.body_b], s.local_b)
            out.append(float(np.linalg.norm(pa - pb)))
        return out


@dataclass
class FacetConstraint:
    """Follower points banded to an ellipsoid level set on the host body."""

    name: str
    host_body: int
    center: np.ndarray            # ellipsoid center, host-body frame
    rotation: np.ndarray          # (3,3) ellipsoid axes, host-body frame
    scales: np.ndarray            # (3,) semi-axes, m
    follower_body: int
    followers: np.ndarray         # (n,3) points, follower-body frame
    tolerance: float = 0.2

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        self.followers = np.asarray(self.followers, dtype=float).reshape(-1, 3)
        if np.any(self.scales <= 0):
            raise ValueError(f"facet {self.name}: scales must be positive")

    def level_set(self, p_host):
        """C(p) for a point in the host-body frame."""
        y = (self.rotation.T @ (np.asarray(p_host) - self.center)) / self.scales
        return float(y @ y - 1.0)


@dataclass
class ContactPoint:
    body: int
    local: np.ndarray
    mu: float = 0.8

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=float)


@dataclass
class Anchor:
    """Bilateral servo rows pinning a body point (and optionally orientation)."""

    body: int
    local: np.ndarray = None
    target_point: np.ndarray = None
    target_rotation: np.ndarray = None  # (3,3) or None
    beta: float = DEFAULT_BAUMGARTE

    def __post_init__(self):
        self.local = np.zeros(3) if self.local is None else np.asarray(self.local, float)
        if self.target_point is not None:
            self.target_point = np.asarray(self.target_point, dtype=float)
        if self.target_rotation is not None:
            self.target_rotation = np.asarray(self.target_rotation, dtype=float)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_ligament(model, segment, q, kin=None):
    """Signed violation in meters: ||p+ - p-|| - l_max (<= 0 is satisfied)."""
    kin = kin or sk.Kinematics(model, q)
    pa = sk.world_point(kin.T[segment.body_a], segment.local_a)
    pb = sk.world_point(kin.T[segment.body_b], segment.local_b)
    return float(np.linalg.norm(pa - pb) - segment.l_max)


def eval_facet(model, facet, q, follower_index, kin=None):
    """Level-set value C for one follower; satisfied iff |C| <= tolerance."""
    kin = kin or sk.Kinematics(model, q)
    p_w = sk.world_point(kin.T[facet.follower_body], facet.followers[follower_index])
    Th = kin.T[facet.host_body]
    p_h = Th[:3, :3].T @ (p_w - Th[:3, 3])
    return facet.level_set(p_h)


def max_constraint_violations(assembly, q, kin=None):
    """(max ligament violation [m], max facet band excess on |C|)."""
    kin = kin or sk.Kinematics(assembly.skeleton, q)
    lig = -np.inf
    for path in assembly.ligaments:
        for seg in path.segments:
            lig = max(lig, eval_ligament(assembly.skeleton, seg, q, kin))
    fac = -np.inf
    for facet in assembly.facets:
        for j in range(len(facet.followers)):
            c = eval_facet(assembly.skeleton, facet, q, j, kin)
            fac = max(fac, abs(c) - facet.tolerance)
    return lig, fac


# ---------------------------------------------------------------------------
# active set selection
# ---------------------------------------------------------------------------

@dataclass
class ConstraintRow:
    J: np.ndarray
    bias: float
    lo: float
    hi: float
    kind: str
    ref: object = None  # e.g. contact index for friction coupling


def _cross(a, b):
    out = np.empty(np.broadcast(a, b).shape)
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


class _Packed:
    """Vectorized constraint-structure arrays, cached per assembly."""

    def __init__(self, assembly):
        segs = [(p, s) for p in assembly.ligaments for s in p.segments]
        self.seg_refs = segs
        self.lig_a = np.array([s.body_a for _, s in segs], dtype=np.int64)
        self.lig_b = np.array([s.body_b for _, s in segs], dtype=np.int64)
        self.lig_pa = (np.stack([s.local_a for _, s in segs])
                       if segs else np.zeros((0, 3)))
        self.lig_pb = (np.stack([s.local_b for _, s in segs])
                       if segs else np.zeros((0, 3)))
        rows = [(f, j) for f in assembly.facets for j in range(len(f.followers))]
        self.fac_refs = rows
        self.fac_host = np.array([f.host_body for f, _ in rows], dtype=np.int64)
        self.fac_fol = np.array([f.follower_body for f, _ in rows], dtype=np.int64)
        self.fac_local = (np.stack([f.followers[j] for f, j in rows])
                          if rows else np.zeros((0, 3)))
        self.fac_center = (np.stack([f.center for f, _ in rows])
                           if rows else np.zeros((0, 3)))
        self.fac_M2 = (np.stack([(f.rotation / f.scales) @ (f.rotation / f.scales).T
                                 for f, _ in rows])
                       if rows else np.zeros((0, 3, 3)))
        self.fac_tol = np.array([f.tolerance for f, _ in rows])
        self.con_body = np.array([c.body for c in assembly.contacts], dtype=np.int64)
        self.con_local = (np.stack([c.local for c in assembly.contacts])
                          if assembly.contacts else np.zeros((0, 3)))


def _packed(assembly):
    cached = getattr(assembly, "_packed_constraints", None)
    if cached is None:
        cached = _Packed(assembly)
        assembly._packed_constraints = cached
    return cached


def active_constraints(assembly, q, qdot, h, kin=None, include_contacts=True):
    """Constraint rows predicted to be active over the next step.

    Evaluation is vectorized over all segments/followers/contacts; Jacobians
    are built only for the (few) predicted-active rows.  Friction rows are
    emitted with placeholder bounds; `resolve_constraints` fixes them from
    the first-pass normal impulses.
    """
    model = assembly.skeleton
    kin = kin or sk.Kinematics(model, q)
    twists = sk.world_twists(model, q, qdot, kin)
    beta = assembly.baumgarte
    pk = _packed(assembly)
    R_all = kin.T[:, :3, :3]
    t_all = kin.T[:, :3, 3]
    w_all = twists[:, :3]
    v_all = twists[:, 3:]
    rows = []

    if len(pk.lig_a):
        pa = np.einsum("sij,sj->si", R_all[pk.lig_a], pk.lig_pa) + t_all[pk.lig_a]
        pb = np.einsum("sij,sj->si", R_all[pk.lig_b], pk.lig_pb) + t_all[pk.lig_b]
        va = _cross(w_all[pk.lig_a], pa) + v_all[pk.lig_a]
        vb = _cross(w_all[pk.lig_b], pb) + v_all[pk.lig_b]
        d = pa - pb
        length = np.linalg.norm(d, axis=1)
        l_max = np.array([s.l_max for _, s in pk.seg_refs])
        safe = np.maximum(length, 1e-12)
        rate = np.einsum("si,si->s", d / safe[:, None], va - vb)
        active = (length + h * rate - l_max > -LIGAMENT_ACTIVATION_MARGIN) \
            & (length > 1e-12)
        for s_i in np.nonzero(active)[0]:
            path, seg = pk.seg_refs[s_i]
            Ja = sk.point_jacobian(model, q, seg.body_a, seg.local_a, kin)
            Jb = sk.point_jacobian(model, q, seg.body_b, seg.local_b, kin)
            # squared-length form: phi = l_max^2 - |d|^2 >= 0
            J = -2.0 * d[s_i] @ (Ja - Jb)
            phi = seg.l_max**2 - length[s_i]**2
            rows.append(ConstraintRow(J=J, bias=beta / h * phi, lo=0.0, hi=np.inf,
                                      kind="ligament", ref=(path.name, seg)))

    if len(pk.fac_host):
        Rh = R_all[pk.fac_host]
        p_w = np.einsum("fij,fj->fi", R_all[pk.fac_fol], pk.fac_local) \
            + t_all[pk.fac_fol]
        v_w = _cross(w_all[pk.fac_fol], p_w) + v_all[pk.fac_fol]
        v_h = _cross(w_all[pk.fac_host], p_w) + v_all[pk.fac_host]
        host_local = np.einsum("fji,fj->fi", Rh, p_w - t_all[pk.fac_host])
        dvec = host_local - pk.fac_center
        M2d = np.einsum("fij,fj->fi", pk.fac_M2, dvec)
        C = np.einsum("fi,fi->f", dvec, M2d) - 1.0
        grad_host = 2.0 * M2d
        rel_host = np.einsum("fji,fj->fi", Rh, v_w - v_h)
        Cdot = np.einsum("fi,fi->f", grad_host, rel_host)
        C_pred = C + h * Cdot
        up_mask = C_pred > pk.fac_tol - FACET_ACTIVATION_MARGIN
        lo_mask = C_pred < -pk.fac_tol + FACET_ACTIVATION_MARGIN
        for f_i in np.nonzero(up_mask | lo_mask)[0]:
            facet, fol_j = pk.fac_refs[f_i]
            Jf = sk.point_jacobian(model, q, facet.follower_body,
                                   facet.followers[fol_j], kin)
            Jh = sk.point_jacobian(model, q, facet.host_body, host_local[f_i], kin)
            J_C = grad_host[f_i] @ (Rh[f_i].T @ (Jf - Jh))
            if up_mask[f_i]:
                phi = facet.tolerance - C[f_i]
                rows.append(ConstraintRow(J=-J_C, bias=beta / h * phi, lo=0.0,
                                          hi=np.inf, kind="facet",
                                          ref=(facet.name, fol_j, "upper")))
            if lo_mask[f_i]:
                phi = C[f_i] + facet.tolerance
                rows.append(ConstraintRow(J=J_C, bias=beta / h * phi, lo=0.0,
                                          hi=np.inf, kind="facet",
                                          ref=(facet.name, fol_j, "lower")))

    if include_contacts and len(pk.con_body):
        gy = assembly.ground_height
        p_w = np.einsum("cij,cj->ci", R_all[pk.con_body], pk.con_local) \
            + t_all[pk.con_body]
        v_w = _cross(w_all[pk.con_body], p_w) + v_all[pk.con_body]
        gap = p_w[:, 1] - gy
        active = gap + h * v_w[:, 1] <= CONTACT_ACTIVATION_MARGIN
        for ci in np.nonzero(active)[0]:
            cp = assembly.contacts[ci]
            Jp = sk.point_jacobian(model, q, cp.body, cp.local, kin)
            rows.append(ConstraintRow(J=Jp[1], bias=beta / h * min(gap[ci], 0.0),
                                      lo=0.0, hi=np.inf, kind="contact",
                                      ref=int(ci)))
            if cp.mu > 0:
                rows.append(ConstraintRow(J=Jp[0], bias=0.0, lo=0.0, hi=0.0,
                                          kind="friction", ref=int(ci)))
                rows.append(ConstraintRow(J=Jp[2], bias=0.0, lo=0.0, hi=0.0,
                                          kind="friction", ref=int(ci)))

    for anchor in assembly.anchors:
        if anchor.target_point is not None:
            p_w = sk.world_point(kin.T[anchor.body], anchor.local)
            Jp = sk.point_jacobian(model, q, anchor.body, anchor.local, kin)
            err = p_w - anchor.target_point
            for axis in range(3):
                rows.append(ConstraintRow(J=Jp[axis],
                                          bias=anchor.beta / h * err[axis],
                                          lo=-np.inf, hi=np.inf, kind="anchor",
                                          ref=(anchor.body, "point", axis)))
        if anchor.target_rotation is not None:
            Jw = sk.body_jacobian_world(model, q, anchor.body, kin)[:3]
            Rb = kin.T[anchor.body][:3, :3]
            err = -log_rotmat(anchor.target_rotation @ Rb.T)
            for axis in range(3):
                rows.append(ConstraintRow(J=Jw[axis],
                                          bias=anchor.beta / h * err[axis],
                                          lo=-np.inf, hi=np.inf, kind="anchor",
                                          ref=(anchor.body, "rot", axis)))
    return rows


# ---------------------------------------------------------------------------
# resolution
# ---------------------------------------------------------------------------

@dataclass
class ConstraintReport:
    num_rows: int = 0
    num_contacts: int = 0
    impulses: np.ndarray = None
    used_fallback: bool = False
    max_residual: float = 0.0
    kinds: list = field(default_factory=list)


def assemble_lcp(rows, M_factor, qdot_pred, cfm=1e-8):
    """Effective-mass LCP for the given rows.

    `cfm` adds a small diagonal regularization (relative to the largest
    diagonal entry); redundant row sets (e.g. many followers pinning one
    body) otherwise make A singular and stall the pivoting solver.
    """
    J = np.stack([r.J for r in rows])
    MinvJt = scipy.linalg.cho_solve(M_factor, J.T)
    A = J @ MinvJt
    A = 0.5 * (A + A.T)
    if cfm:
        A[np.diag_indices_from(A)] += cfm * max(1.0, A.diagonal().max())
    b = J @ qdot_pred + np.array([r.bias for r in rows])
    lo = np.array([r.lo for r in rows])
    hi = np.array([r.hi for r in rows])
    return LcpProblem(A=A, b=b, lo=lo, hi=hi,
                      meta=[r.kind for r in rows]), MinvJt


def _solve_with_fallback(problem, report):
    try:
        return solve_lcp(problem)
    except LcpError:
        report.used_fallback = True
        return solve_lcp_pgs(problem, sweeps=200)


def resolve_constraints(assembly, q, qdot_pred, h, M_factor=None, kin=None,
                        rows=None, debug_verify=False):
    """Correct predicted velocities so active constraints hold.

    qdot' = qdot_pred + M^-1 J^T z with z from the boxed LCP.  Friction rows
    are bounded by mu times the first-pass normal impulses (two-pass boxed
    Coulomb model).  Returns (qdot', ConstraintReport).
    """
    model = assembly.skeleton
    kin = kin or sk.Kinematics(model, q)
    report = ConstraintReport()
    if rows is None:
        rows = active_constraints(assembly, q, qdot_pred, h, kin)
    if not rows:
        return qdot_pred, report
    if M_factor is None:
        M_factor = scipy.linalg.cho_factor(sk.mass_matrix(model, q, kin))

    base_rows = [r for r in rows if r.kind != "friction"]
    friction_rows = [r for r in rows if r.kind == "friction"]
    problem, MinvJt = assemble_lcp(base_rows, M_factor, qdot_pred)
    z = _solve_with_fallback(problem, report)

    if friction_rows:
        normal_z = {}
        for r, zi in zip(base_rows, z):
            if r.kind == "contact":
                normal_z[r.ref] = zi
        for r in friction_rows:
            bound = assembly.contacts[r.ref].mu * normal_z.get(r.ref, 0.0)
            r.lo, r.hi = -bound, bound
        all_rows = base_rows + friction_rows
        problem, MinvJt = assemble_lcp(all_rows, M_factor, qdot_pred)
        z = _solve_with_fallback(problem, report)
        rows_used = all_rows
    else:
        rows_used = base_rows

    qdot_new = qdot_pred + MinvJt @ z
    report.num_rows = len(rows_used)
    report.num_contacts = sum(1 for r in rows_used if r.kind == "contact")
    report.impulses = z
    report.kinds = [r.kind for r in rows_used]
    if debug_verify:
        report.max_residual = complementarity_residual(problem, z)
    return qdot_new, report
