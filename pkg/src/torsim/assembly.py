"""Coupled torso scene: skeleton + discs + constraints + PD control.

One simulation step follows the coupled forward-dynamics recipe exactly:
quasi-static FEM solve per disc at the current bone pose, disc coupling
wrenches onto the bones, unconstrained articulated forward dynamics with
control and passive torques, velocity integration, LCP constraint resolution
on velocities, then position integration; the disc state carries over.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import skeleton as sk
from .constraints import (active_constraints, max_constraint_violations,
                          resolve_constraints)
from .fem import coupling_force, quasistatic_solve


@dataclass
class DiscUnit:
    """One disc system bound between a lower and an upper vertebra."""

    name: str
    system: object
    lower_body: int
    upper_body: int


@dataclass
class TorsoAssembly:
    skeleton: sk.SkeletonModel
    discs: list = field(default_factory=list)
    ligaments: list = field(default_factory=list)
    facets: list = field(default_factory=list)
    pd_targets: np.ndarray = None
    pd_kp: np.ndarray = None
    pd_kd: np.ndarray = None
    actuated: np.ndarray = None
    passive_kp: np.ndarray = None
    passive_kd: np.ndarray = None
    passive_rest: np.ndarray = None
    step_rate: float = 600.0
    baumgarte: float = 0.2
    fem_iterations: int = 10
    contacts: list = field(default_factory=list)
    anchors: list = field(default_factory=list)
    ground_height: float = 0.0
    has_ground: bool = False
    limit_lo: np.ndarray = None    # soft per-DoF range springs
    limit_hi: np.ndarray = None
    limit_kp: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.skeleton.num_dof
        if self.pd_targets is None:
            self.pd_targets = np.zeros(n)
        if self.pd_kp is None:
            self.pd_kp = np.zeros(n)
        if self.pd_kd is None:
            self.pd_kd = np.zeros(n)
        if self.actuated is None:
            # rotational DoFs of non-root joints; root and all free-joint
            # translations are never PD-actuated
            act = self.skeleton.rotational_dof_mask()
            act[self.skeleton.joint_slice(0)] = False
            self.actuated = act
        if self.passive_kp is None:
            self.passive_kp = np.zeros(n)
        if self.passive_kd is None:
            self.passive_kd = np.zeros(n)
        if self.passive_rest is None:
            self.passive_rest = np.zeros(n)
        if self.limit_lo is None:
            self.limit_lo = np.full(n, -np.inf)
        if self.limit_hi is None:
            self.limit_hi = np.full(n, np.inf)
        if self.limit_kp is None:
            self.limit_kp = np.zeros(n)
        for arr in ("pd_targets", "pd_kp", "pd_kd", "passive_kp", "passive_kd",
                    "passive_rest", "limit_lo", "limit_hi", "limit_kp"):
            setattr(self, arr, np.asarray(getattr(self, arr), dtype=float))
        self.actuated = np.asarray(self.actuated, dtype=bool)
        trans = self.skeleton.root_translation_dofs()
        if trans.size and np.any(self.actuated[trans]):
            raise ValueError("root translational DoFs cannot be PD-actuated")

    @property
    def h(self):
        return 1.0 / self.step_rate

    def replace(self, **kwargs):
        """Copy with fields swapped (assemblies are treated as immutable)."""
        return dataclasses.replace(self, **kwargs)

    def initial_state(self, q=None, qdot=None):
        n = self.skeleton.num_dof
        return AssemblyState(
            q=np.zeros(n) if q is None else np.array(q, dtype=float),
            qdot=np.zeros(n) if qdot is None else np.array(qdot, dtype=float),
            disc_positions=[d.system.mesh.vertices.copy() for d in self.discs],
            time=0.0)

    def constraint_counts(self):
        n_seg = sum(len(p.segments) for p in self.ligaments)
        n_fol = sum(len(f.followers) for f in self.facets)
        return {"ligaments": len(self.ligaments),
                "ligament_segments": n_seg,
                "facets": len(self.facets),
                "facet_follower_rows": n_fol,
                "total_rigid_constraints": n_seg + n_fol}


@dataclass
class AssemblyState:
    q: np.ndarray
    qdot: np.ndarray
    disc_positions: list
    time: float = 0.0

    def copy(self):
        return AssemblyState(self.q.copy(), self.qdot.copy(),
                             [x.copy() for x in self.disc_positions], self.time)


@dataclass
class StepReport:
    fem_iterations: int = 0
    fem_flagged: int = 0
    constraint: object = None
    tau_disc_norm: float = 0.0


class SimulationError(RuntimeError):
    def __init__(self, message, step_index):
        self.step_index = step_index
        super().__init__(f"{message} at step {step_index}")


# ---------------------------------------------------------------------------
# control torques
# ---------------------------------------------------------------------------

def pd_torque(assembly, q, qdot, targets=None):
    """Per-DoF PD on actuated rotational coordinates, zero elsewhere."""
    t = assembly.pd_targets if targets is None else targets
    tau = assembly.pd_kp * (t - q) - assembly.pd_kd * qdot
    tau[~assembly.actuated] = 0.0
    return tau


def proportional_torque(assembly, q, targets=None):
    """Spring parts of PD + passive + soft limits (damping handled implicitly
    in the velocity update)."""
    t = assembly.pd_targets if targets is None else targets
    tau_pd = assembly.pd_kp * (t - q)
    tau_pd[~assembly.actuated] = 0.0
    tau = tau_pd - assembly.passive_kp * (q - assembly.passive_rest)
    below = q < assembly.limit_lo
    above = q > assembly.limit_hi
    if np.any(below):
        tau[below] += assembly.limit_kp[below] * (assembly.limit_lo[below] - q[below])
    if np.any(above):
        tau[above] += assembly.limit_kp[above] * (assembly.limit_hi[above] - q[above])
    return tau


def damping_vector(assembly):
    """Per-DoF damping folded into the implicit velocity update."""
    d = assembly.passive_kd.copy()
    d[assembly.actuated] += assembly.pd_kd[assembly.actuated]
    return d


def passive_torque(assembly, q, qdot):
    """Passive per-DoF spring-dampers plus soft joint-range springs."""
    tau = -assembly.passive_kp * (q - assembly.passive_rest) \
        - assembly.passive_kd * qdot
    below = q < assembly.limit_lo
    above = q > assembly.limit_hi
    if np.any(below):
        tau[below] += assembly.limit_kp[below] * (assembly.limit_lo[below] - q[below])
    if np.any(above):
        tau[above] += assembly.limit_kp[above] * (assembly.limit_hi[above] - q[above])
    return tau


# ---------------------------------------------------------------------------
# disc coupling
# ---------------------------------------------------------------------------

def _disc_attach_arrays(system):
    cached = getattr(system, "_attach_arrays", None)
    if cached is None:
        bodies = np.array([a.body_id for a in system.attachments], dtype=np.int64)
        locals_ = np.stack([a.body_local_point for a in system.attachments])
        cached = (bodies, locals_)
        system._attach_arrays = cached
    return cached


def disc_attachment_points(assembly, disc_index, kin):
    """World positions of the bone side of each attachment of one disc."""
    system = assembly.discs[disc_index].system
    bodies, locals_ = _disc_attach_arrays(system)
    R = kin.T[bodies, :3, :3]
    t = kin.T[bodies, :3, 3]
    return np.einsum("aij,aj->ai", R, locals_) + t


def solve_discs(assembly, state, kin, num_iterations=None):
    """Quasi-static solve of every disc; returns (positions, wrenches, report).

    Wrenches are per-body world wrenches (about the world origin) from the
    coupling forces pulling bones toward disc boundary vertices.
    """
    model = assembly.skeleton
    wrenches = np.zeros((model.num_bodies, 6))
    new_positions = []
    iters = 0
    flagged = 0
    n_it = assembly.fem_iterations if num_iterations is None else num_iterations
    for di, disc in enumerate(assembly.discs):
        P = disc_attachment_points(assembly, di, kin)
        res = quasistatic_solve(disc.system, P, num_iterations=n_it,
                                x0=state.disc_positions[di])
        forces = coupling_force(disc.system, res.positions, P)
        torques = np.empty_like(forces)
        torques[:, 0] = P[:, 1] * forces[:, 2] - P[:, 2] * forces[:, 1]
        torques[:, 1] = P[:, 2] * forces[:, 0] - P[:, 0] * forces[:, 2]
        torques[:, 2] = P[:, 0] * forces[:, 1] - P[:, 1] * forces[:, 0]
        body_ids = _disc_attach_arrays(disc.system)[0]
        np.add.at(wrenches[:, :3], body_ids, torques)
        np.add.at(wrenches[:, 3:], body_ids, forces)
        new_positions.append(res.positions)
        iters += res.iterations
        flagged += res.flagged_tets
    return new_positions, wrenches, (iters, flagged)


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def step(assembly, state, tau_ext=None, external_wrenches=None,
         step_index=0, debug_verify=False):
    """Advance one step of the coupled simulation.

    Ordering: (1) quasi-static FEM per disc at the current pose; (2) disc
    coupling wrenches; (3) unconstrained forward dynamics with external, PD,
    and passive torques; (4) velocity integration; (5) LCP velocity
    correction; (6) position integration; (7) disc positions carried over.
    """
    model = assembly.skeleton
    h = assembly.h
    q, qdot = state.q, state.qdot
    kin = sk.Kinematics(model, q)

    disc_positions, wrenches, (fem_iters, flagged) = solve_discs(assembly, state, kin)
    if external_wrenches is not None:
        wrenches = wrenches + external_wrenches
    tau = proportional_torque(assembly, q)
    if tau_ext is not None:
        tau = tau + tau_ext

    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))
            and np.all(np.isfinite(tau))):
        raise SimulationError("non-finite state or torque", step_index)
    try:
        qdot_pred, M_factor = sk.velocity_update_implicit_damping(
            model, q, qdot, tau, damping_vector(assembly), h,
            external_wrenches=wrenches, kin=kin, gyro_dt=h)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SimulationError(str(exc), step_index) from exc

    rows = active_constraints(assembly, q, qdot_pred, h, kin)
    if rows:
        qdot_new, report = resolve_constraints(assembly, q, qdot_pred, h,
                                               M_factor, kin, rows,
                                               debug_verify=debug_verify)
    else:
        qdot_new = qdot_pred
        from .constraints import ConstraintReport
        report = ConstraintReport()

    q_new = sk.integrate_positions(model, q, qdot_new, h)
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qdot_new))):
        raise SimulationError("non-finite state after integration", step_index)

    new_state = AssemblyState(q=q_new, qdot=qdot_new,
                              disc_positions=disc_positions,
                              time=state.time + h)
    rep = StepReport(fem_iterations=fem_iters, fem_flagged=flagged,
                     constraint=report,
                     tau_disc_norm=float(np.linalg.norm(wrenches)))
    return new_state, rep


def simulate(assembly, state, duration, tau_fn=None, callback=None,
             debug_verify=False):
    """Run for `duration` seconds; optional per-step torque and callback."""
    n_steps = int(round(duration * assembly.step_rate))
    for k in range(n_steps):
        tau = tau_fn(k, state) if tau_fn is not None else None
        state, rep = step(assembly, state, tau_ext=tau, step_index=k,
                          debug_verify=debug_verify)
        if callback is not None:
            callback(k, state, rep)
    return state


def settle(assembly, state, max_duration=2.0, qdot_tol=1e-3, check_every=10):
    """Simulate until max |qdot| < qdot_tol or the time budget runs out.

    Returns (state, converged, elapsed).
    """
    n_steps = int(round(max_duration * assembly.step_rate))
    for k in range(n_steps):
        state, _ = step(assembly, state, step_index=k)
        if (k + 1) % check_every == 0 and np.abs(state.qdot).max() < qdot_tol:
            return state, True, (k + 1) * assembly.h
    return state, np.abs(state.qdot).max() < qdot_tol, n_steps * assembly.h
