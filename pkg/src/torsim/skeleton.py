"""Articulated rigid-body tree in generalized coordinates.

Joints are either 6-DoF free joints (3 exponential-map rotation coordinates
plus 3 translation coordinates) or 3-DoF ball joints.  Generalized velocities
are the relative twist of the child expressed in the child joint frame, which
keeps every joint's motion subspace constant and makes the composite-rigid-
body, recursive-Newton-Euler, and articulated-body algorithms textbook.

Twists are ordered (angular; linear).  Body frames coincide with joint child
frames; each body's center of mass may be offset inside its frame.

The velocity update supports a discrete gyroscopic bias (`gyro_dt`): each
body's spatial momentum is transported through the step's rotation instead of
being differentiated explicitly, which keeps long unforced simulations from
leaking angular momentum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .so3 import exp_rotvec, hat, log_rotmat


# ---------------------------------------------------------------------------
# model description
# ---------------------------------------------------------------------------

FREE6 = "free6"
BALL3 = "ball3"
_JOINT_DOF = {FREE6: 6, BALL3: 3}


@dataclass
class Body:
    name: str
    mass: float
    inertia: np.ndarray          # (3,3) about COM, body frame, kg m^2
    parent: int                  # index of parent body, -1 for the root
    joint_type: str = FREE6
    joint_transform: np.ndarray = None   # joint frame in parent body frame (4x4)
    com: np.ndarray = None               # COM offset in body frame
    geometry: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        if self.joint_transform is None:
            self.joint_transform = np.eye(4)
        self.joint_transform = np.asarray(self.joint_transform, dtype=float)
        self.com = np.zeros(3) if self.com is None else np.asarray(self.com, float)
        if self.mass <= 0:
            raise ValueError(f"body {self.name}: mass must be > 0")
        if self.joint_type not in _JOINT_DOF:
            raise ValueError(f"body {self.name}: unknown joint type {self.joint_type}")


class SkeletonModel:
    """Immutable rigid-body tree; all operations are pure functions of it."""

    def __init__(self, bodies, gravity=(0.0, -9.81, 0.0)):
        self.bodies = list(bodies)
        self.gravity = np.asarray(gravity, dtype=float)
        self._validate()
        self.dof_offsets = []
        n = 0
        for b in self.bodies:
            self.dof_offsets.append(n)
            n += _JOINT_DOF[b.joint_type]
        self.num_dof = n
        self.num_bodies = len(self.bodies)
        self._children = [[] for _ in self.bodies]
        for i, b in enumerate(self.bodies):
            if b.parent >= 0:
                self._children[b.parent].append(i)
        # constant motion subspaces and spatial inertias
        self._S = []
        self._G = []
        for b in self.bodies:
            nd = _JOINT_DOF[b.joint_type]
            S = np.zeros((6, nd))
            S[:3, :3] = np.eye(3)
            if b.joint_type == FREE6:
                S[3:, 3:] = np.eye(3)
            self._S.append(S)
            self._G.append(spatial_inertia(b.mass, b.inertia, b.com))
        self._ancestors = []
        for i in range(len(self.bodies)):
            chain = []
            j = i
            while j >= 0:
                chain.append(j)
                j = self.bodies[j].parent
            self._ancestors.append(chain)

    def _validate(self):
        names = set()
        for i, b in enumerate(self.bodies):
            if b.name in names:
                raise ValueError(f"duplicate body name {b.name}")
            names.add(b.name)
            if b.parent >= i:
                raise ValueError(f"body {b.name}: parent must precede child")
            sym = np.linalg.norm(b.inertia - b.inertia.T)
            if sym > 1e-9:
                raise ValueError(f"body {b.name}: inertia not symmetric")
            if np.min(np.linalg.eigvalsh(b.inertia)) <= 0:
                raise ValueError(f"body {b.name}: inertia not positive definite")
        roots = [b for b in self.bodies if b.parent < 0]
        if len(self.bodies) and len(roots) != 1:
            raise ValueError("model must have exactly one root body")

    def body_index(self, name):
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def joint_slice(self, i):
        off = self.dof_offsets[i]
        return slice(off, off + _JOINT_DOF[self.bodies[i].joint_type])

    def rotational_dof_mask(self):
        """True for rotation coordinates (ball joints, free-joint rotations)."""
        mask = np.zeros(self.num_dof, dtype=bool)
        for i, b in enumerate(self.bodies):
            off = self.dof_offsets[i]
            mask[off:off + 3] = True
        return mask

    def root_translation_dofs(self):
        b0 = self.bodies[0]
        if b0.joint_type == FREE6:
            return np.arange(3, 6)
        return np.arange(0)

    def total_mass(self):
        return sum(b.mass for b in self.bodies)

    def zero_state(self):
        return GeneralizedState(np.zeros(self.num_dof), np.zeros(self.num_dof))


@dataclass
class GeneralizedState:
    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have matching dimension")

    def copy(self):
        return GeneralizedState(self.q.copy(), self.qdot.copy())


# ---------------------------------------------------------------------------
# spatial algebra helpers
# ---------------------------------------------------------------------------

def spatial_inertia(mass, inertia_com, com):
    c = hat(com)
    G = np.zeros((6, 6))
    G[:3, :3] = inertia_com - mass * (c @ c)
    G[:3, 3:] = mass * c
    G[3:, :3] = mass * c.T
    G[3:, 3:] = mass * np.eye(3)
    return G


def adjoint(T):
    """Ad(T): maps twists in frame b to frame a for T = T_ab."""
    R = T[:3, :3]
    p = T[:3, 3]
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, :3] = hat(p) @ R
    X[3:, 3:] = R
    return X


def ad(V):
    """Lie bracket matrix for a twist (angular; linear)."""
    w = hat(V[:3])
    v = hat(V[3:])
    X = np.zeros((6, 6))
    X[:3, :3] = w
    X[3:, :3] = v
    X[3:, 3:] = w
    return X


def transform_inverse(T):
    R = T[:3, :3]
    p = T[:3, 3]
    Ti = np.eye(4)
    Ti[:3, :3] = R.T
    Ti[:3, 3] = -R.T @ p
    return Ti


def _joint_motion(jtype, qj):
    T = np.eye(4)
    T[:3, :3] = exp_rotvec(qj[:3])
    if jtype == FREE6:
        T[:3, 3] = qj[3:6]
    return T


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

class Kinematics:
    """Per-state cache: body transforms and parent-to-child twist maps."""

    __slots__ = ("T", "X_up", "_model", "_Sw")

    def __init__(self, model, q):
        nb = model.num_bodies
        self.T = np.empty((nb, 4, 4))
        self.X_up = np.empty((nb, 6, 6))
        self._model = model
        self._Sw = None
        for i, b in enumerate(model.bodies):
            Tj = b.joint_transform @ _joint_motion(b.joint_type, q[model.joint_slice(i)])
            self.X_up[i] = adjoint(transform_inverse(Tj))
            self.T[i] = Tj if b.parent < 0 else self.T[b.parent] @ Tj

    def world_subspaces(self):
        """Per-joint motion subspace columns as world twists (lazy)."""
        if self._Sw is None:
            self._Sw = [adjoint(self.T[i]) @ self._model._S[i]
                        for i in range(self._model.num_bodies)]
        return self._Sw


def body_transforms(model, q):
    return Kinematics(model, q).T


def body_velocities(model, q, qdot, kin=None):
    """Body-frame twists for every body."""
    kin = kin or Kinematics(model, q)
    V = np.zeros((model.num_bodies, 6))
    for i, b in enumerate(model.bodies):
        vj = model._S[i] @ qdot[model.joint_slice(i)]
        V[i] = vj if b.parent < 0 else kin.X_up[i] @ V[b.parent] + vj
    return V


def world_twists(model, q, qdot, kin=None):
    """World-frame spatial twists (at the world origin) for every body."""
    kin = kin or Kinematics(model, q)
    Vb = body_velocities(model, q, qdot, kin)
    return np.einsum("bij,bj->bi", np.array([adjoint(T) for T in kin.T]), Vb)


def world_point(T, local_point):
    return T[:3, :3] @ np.asarray(local_point, float) + T[:3, 3]


def world_point_velocity(twist_world, point_world):
    """Velocity of a body-fixed point from the body's world spatial twist."""
    return np.cross(twist_world[:3], point_world) + twist_world[3:]


def point_jacobian(model, q, body_id, body_local_point, kin=None):
    """3 x DoF Jacobian mapping qdot to the world velocity of a body point."""
    if body_id < 0 or body_id >= model.num_bodies:
        raise IndexError(f"invalid body id {body_id}")
    kin = kin or Kinematics(model, q)
    Sw = kin.world_subspaces()
    p = world_point(kin.T[body_id], body_local_point)
    J = np.zeros((3, model.num_dof))
    ph = hat(p)
    for i in model._ancestors[body_id]:
        cols = Sw[i]
        J[:, model.joint_slice(i)] = -ph @ cols[:3] + cols[3:]
    return J


def body_jacobian_world(model, q, body_id, kin=None):
    """6 x DoF world-twist Jacobian (angular; linear at world origin)."""
    kin = kin or Kinematics(model, q)
    Sw = kin.world_subspaces()
    J = np.zeros((6, model.num_dof))
    for i in model._ancestors[body_id]:
        J[:, model.joint_slice(i)] = Sw[i]
    return J


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _gravity_seed(model):
    a0 = np.zeros(6)
    a0[3:] = -model.gravity
    return a0


def _discrete_gyro_bias(G, V, h, iterations=2):
    """Bias wrench transporting the body momentum through the step rotation.

    Returns b such that G (V + h * dV) with dV from -b reproduces
    Ad(exp(h Vhat'))^T G V, i.e. the momentum seen from the moved frame.
    Reduces to the continuous bias -ad_V^T (G V) as h -> 0.
    """
    L = G @ V
    Vp = V
    for _ in range(iterations):
        E = np.eye(4)
        E[:3, :3] = exp_rotvec(h * Vp[:3])
        E[:3, 3] = h * Vp[3:]
        Lp = adjoint(E).T @ L
        Vp = np.linalg.solve(G, Lp)
    return (L - Lp) / h


def _bias_wrenches(model, V, h=None):
    out = np.empty((model.num_bodies, 6))
    for i in range(model.num_bodies):
        G = model._G[i]
        if h is None:
            out[i] = -ad(V[i]).T @ (G @ V[i])
        else:
            out[i] = -_discrete_gyro_bias(G, V[i], h)
    return out


def rnea(model, q, qdot, qddot, external_wrenches=None, kin=None, gyro_dt=None):
    """Inverse dynamics: generalized forces realizing qddot at (q, qdot).

    `external_wrenches` is an optional (num_bodies, 6) array of world-frame
    wrenches (about the world origin) applied to each body.
    """
    kin = kin or Kinematics(model, q)
    nb = model.num_bodies
    V = np.zeros((nb, 6))
    A = np.zeros((nb, 6))
    a0 = _gravity_seed(model)
    for i, b in enumerate(model.bodies):
        sl = model.joint_slice(i)
        vj = model._S[i] @ qdot[sl]
        if b.parent < 0:
            V[i] = vj
            A[i] = kin.X_up[i] @ a0 + model._S[i] @ qddot[sl] + ad(V[i]) @ vj
        else:
            V[i] = kin.X_up[i] @ V[b.parent] + vj
            A[i] = kin.X_up[i] @ A[b.parent] + model._S[i] @ qddot[sl] + ad(V[i]) @ vj
    bias = _bias_wrenches(model, V, gyro_dt)
    F = np.zeros((nb, 6))
    for i in range(nb):
        F[i] = model._G[i] @ A[i] - bias[i]
        if external_wrenches is not None:
            F[i] -= adjoint(kin.T[i]).T @ external_wrenches[i]
    tau = np.zeros(model.num_dof)
    for i in range(nb - 1, -1, -1):
        tau[model.joint_slice(i)] = model._S[i].T @ F[i]
        p = model.bodies[i].parent
        if p >= 0:
            F[p] += kin.X_up[i].T @ F[i]
    return tau


def bias_forces(model, q, qdot, external_wrenches=None, kin=None, gyro_dt=None):
    """Coriolis, gyroscopic, gravity (and external) generalized forces."""
    return rnea(model, q, qdot, np.zeros(model.num_dof), external_wrenches,
                kin, gyro_dt)


def mass_matrix(model, q, kin=None):
    """Joint-space inertia matrix via the composite-rigid-body algorithm."""
    kin = kin or Kinematics(model, q)
    nb = model.num_bodies
    Gc = [model._G[i].copy() for i in range(nb)]
    for i in range(nb - 1, -1, -1):
        p = model.bodies[i].parent
        if p >= 0:
            Gc[p] += kin.X_up[i].T @ Gc[i] @ kin.X_up[i]
    M = np.zeros((model.num_dof, model.num_dof))
    for i in range(nb):
        Fi = Gc[i] @ model._S[i]
        sl_i = model.joint_slice(i)
        M[sl_i, sl_i] = model._S[i].T @ Fi
        j = i
        while model.bodies[j].parent >= 0:
            Fi = kin.X_up[j].T @ Fi
            j = model.bodies[j].parent
            sl_j = model.joint_slice(j)
            blk = model._S[j].T @ Fi
            M[sl_j, sl_i] = blk
            M[sl_i, sl_j] = blk.T
    return M


def forward_dynamics(model, q, qdot, tau, external_wrenches=None, kin=None,
                     gyro_dt=None):
    """Articulated-body algorithm, O(n).  Returns qddot."""
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))
            and np.all(np.isfinite(tau))):
        raise ValueError("non-finite inputs to forward dynamics")
    kin = kin or Kinematics(model, q)
    nb = model.num_bodies
    V = np.zeros((nb, 6))
    cvel = np.zeros((nb, 6))
    for i, b in enumerate(model.bodies):
        vj = model._S[i] @ qdot[model.joint_slice(i)]
        V[i] = vj if b.parent < 0 else kin.X_up[i] @ V[b.parent] + vj
        cvel[i] = ad(V[i]) @ vj
    bias = _bias_wrenches(model, V, gyro_dt)
    GA = [model._G[i].copy() for i in range(nb)]
    pA = np.zeros((nb, 6))
    for i in range(nb):
        pA[i] = -bias[i]
        if external_wrenches is not None:
            pA[i] -= adjoint(kin.T[i]).T @ external_wrenches[i]
    U = [None] * nb
    Dinv = [None] * nb
    u = [None] * nb
    for i in range(nb - 1, -1, -1):
        S = model._S[i]
        U[i] = GA[i] @ S
        D = S.T @ U[i]
        Dinv[i] = np.linalg.inv(D)
        u[i] = tau[model.joint_slice(i)] - S.T @ pA[i]
        p = model.bodies[i].parent
        if p >= 0:
            Ga = GA[i] - U[i] @ Dinv[i] @ U[i].T
            pa = pA[i] + Ga @ cvel[i] + U[i] @ (Dinv[i] @ u[i])
            GA[p] += kin.X_up[i].T @ Ga @ kin.X_up[i]
            pA[p] += kin.X_up[i].T @ pa
    qddot = np.zeros(model.num_dof)
    A = np.zeros((nb, 6))
    a0 = _gravity_seed(model)
    for i, b in enumerate(model.bodies):
        a_par = a0 if b.parent < 0 else A[b.parent]
        ap = kin.X_up[i] @ a_par + cvel[i]
        dd = Dinv[i] @ (u[i] - U[i].T @ ap)
        qddot[model.joint_slice(i)] = dd
        A[i] = ap + model._S[i] @ dd
    return qddot


def forward_dynamics_dense(model, q, qdot, tau, external_wrenches=None,
                           gyro_dt=None):
    """Mass-matrix route (cross-validation of the articulated-body solver)."""
    kin = Kinematics(model, q)
    M = mass_matrix(model, q, kin)
    c = bias_forces(model, q, qdot, external_wrenches, kin, gyro_dt)
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M), tau - c)


def velocity_update_implicit_damping(model, q, qdot, tau, damping, h,
                                     external_wrenches=None, kin=None,
                                     gyro_dt=None):
    """Semi-implicit velocity update with per-DoF damping handled implicitly.

    Solves (M + h diag(damping)) qdot' = M qdot + h (tau - c).  Explicit
    damping torques -d_i qdot_i are unconditionally unstable once
    h d_i / M_ii exceeds 2, which small-inertia joints hit at practical
    gains; folding them into the velocity solve removes the trap without
    changing the semi-implicit structure.

    Returns (qdot', M_factor) where M_factor is the Cholesky factorization
    of the plain mass matrix (reused by the constraint solver: impulses act
    through M, not the damped operator).
    """
    kin = kin or Kinematics(model, q)
    M = mass_matrix(model, q, kin)
    c = bias_forces(model, q, qdot, external_wrenches, kin, gyro_dt)
    lhs = M + h * np.diag(damping)
    rhs = M @ qdot + h * (tau - c)
    qdot_new = scipy.linalg.cho_solve(scipy.linalg.cho_factor(lhs), rhs)
    M_factor = scipy.linalg.cho_factor(M)
    return qdot_new, M_factor


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def integrate_velocities(qdot, qddot, h):
    return qdot + h * np.asarray(qddot)


def integrate_positions(model, q, qdot_new, h):
    """Advance positions with the exponential map on rotation coordinates."""
    q_new = np.array(q, dtype=float)
    for i, b in enumerate(model.bodies):
        sl = model.joint_slice(i)
        qj = q[sl]
        vj = qdot_new[sl]
        R = exp_rotvec(qj[:3]) @ exp_rotvec(h * vj[:3])
        q_new[sl.start:sl.start + 3] = log_rotmat(R)
        if b.joint_type == FREE6:
            q_new[sl.start + 3:sl.start + 6] = qj[3:6] + h * (exp_rotvec(qj[:3]) @ vj[3:])
    return q_new


def integrate(model, q, qdot, qddot, h):
    """Semi-implicit Euler: velocities first, then positions."""
    if h <= 0:
        raise ValueError("h must be > 0")
    qdot_new = integrate_velocities(qdot, qddot, h)
    q_new = integrate_positions(model, q, qdot_new, h)
    return q_new, qdot_new


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------

def total_momentum(model, q, qdot):
    """World-frame (angular about origin; linear) momentum of the tree."""
    kin = Kinematics(model, q)
    Vb = body_velocities(model, q, qdot, kin)
    p = np.zeros(6)
    for i in range(model.num_bodies):
        hb = model._G[i] @ Vb[i]
        p += adjoint(transform_inverse(kin.T[i])).T @ hb
    return p


def kinetic_energy(model, q, qdot):
    Vb = body_velocities(model, q, qdot)
    return 0.5 * sum(Vb[i] @ model._G[i] @ Vb[i] for i in range(model.num_bodies))


def potential_energy(model, q):
    kin = Kinematics(model, q)
    return -sum(b.mass * model.gravity @ world_point(kin.T[i], b.com)
                for i, b in enumerate(model.bodies))


def center_of_mass(model, q, kin=None):
    kin = kin or Kinematics(model, q)
    m = 0.0
    c = np.zeros(3)
    for i, b in enumerate(model.bodies):
        c += b.mass * world_point(kin.T[i], b.com)
        m += b.mass
    return c / m


def center_of_mass_velocity(model, q, qdot):
    kin = Kinematics(model, q)
    tw = world_twists(model, q, qdot, kin)
    m = 0.0
    v = np.zeros(3)
    for i, b in enumerate(model.bodies):
        p = world_point(kin.T[i], b.com)
        v += b.mass * world_point_velocity(tw[i], p)
        m += b.mass
    return v / m
