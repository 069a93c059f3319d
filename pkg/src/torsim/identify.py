"""Parameter identification: facet ellipsoid fitting and ligament tightening.

Facet ellipsoids are fit as minimum-volume enclosing ellipsoids (Khachiyan's
algorithm) of annotated process vertices, then follower points are drawn from
near-surface candidates.  Ligament maximum lengths start generous and are
multiplicatively shortened, per bone pair, until a documented set of extreme
relative orientations stops being reachable in simulation; the last feasible
value is kept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .assembly import AssemblyState, step
from .constraints import Anchor
from .so3 import exp_rotvec, log_rotmat

MIN_AXIS_FLOOR = 1e-3          # m, smallest ellipsoid semi-axis for flat inputs
FOLLOWER_MIN_SPACING = 1e-3    # m
FOLLOWER_MIN_TRIANGLE = 1e-7   # m^2
POSE_ANGLE_TOL = np.deg2rad(2.0)
POSE_TRANSLATION_GUARD = 2e-3  # m, allowed deviation from the pose's natural
                               # rotate-about-disc translation


# ---------------------------------------------------------------------------
# minimum-volume enclosing ellipsoid
# ---------------------------------------------------------------------------

def _khachiyan(P, tol):
    n, d = P.shape
    Q = np.vstack([P.T, np.ones(n)])
    u = np.full(n, 1.0 / n)
    err = tol + 1.0
    it = 0
    while err > tol and it < 5000:
        V = Q @ (u[:, None] * Q.T)
        M = np.einsum("in,ij,jn->n", Q, np.linalg.inv(V), Q)
        j = int(np.argmax(M))
        maximum = M[j]
        step_size = (maximum - d - 1.0) / ((d + 1.0) * (maximum - 1.0))
        new_u = (1.0 - step_size) * u
        new_u[j] += step_size
        err = np.linalg.norm(new_u - u)
        u = new_u
        it += 1
    c = P.T @ u
    A = np.linalg.inv(P.T @ (u[:, None] * P) - np.outer(c, c)) / d
    return c, A


def fit_facet_ellipsoid(vertices, tolerance=1e-6):
    """Minimum-volume enclosing ellipsoid of the superior-process vertices.

    Returns (center, rotation, scales) with rotation orthonormal (det +1) and
    scales the semi-axes, inflated so every input vertex satisfies C <= 0.
    Coplanar inputs get the smallest axis floored at 1 mm (with a warning).
    """
    P = np.asarray(vertices, dtype=float).reshape(-1, 3)
    if len(P) < 4:
        raise ValueError("need at least 4 vertices")
    centered = P - P.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[-1] < 1e-9 * max(svals[0], 1e-12):
        warnings.warn("coplanar facet vertices: flooring smallest axis to 1 mm")
        _, _, Vt = np.linalg.svd(centered)
        plane = Vt[:2]
        c2, A2 = _khachiyan(centered @ plane.T, tolerance)
        evals, evecs = np.linalg.eigh(A2)
        s2 = 1.0 / np.sqrt(evals)
        R = np.column_stack([plane.T @ evecs[:, 0], plane.T @ evecs[:, 1], Vt[2]])
        if np.linalg.det(R) < 0:
            R[:, 2] *= -1.0
        center = P.mean(axis=0) + plane.T @ c2
        scales = np.array([s2[0], s2[1], MIN_AXIS_FLOOR])
    else:
        c, A = _khachiyan(P, tolerance)
        evals, evecs = np.linalg.eigh(A)
        scales = 1.0 / np.sqrt(evals)
        R = evecs
        if np.linalg.det(R) < 0:
            R[:, 2] *= -1.0
        center = c
        scales = np.maximum(scales, MIN_AXIS_FLOOR * 1e-3)
    # guarantee containment: inflate so max normalized radius is exactly <= 1
    y = (R.T @ (P - center).T) / scales[:, None]
    rho = np.sqrt((y * y).sum(axis=0)).max()
    if rho > 1.0:
        scales = scales * rho
    return center, R, scales


def ellipsoid_level_set(point, center, rotation, scales):
    y = (np.asarray(rotation).T @ (np.asarray(point) - np.asarray(center))) \
        / np.asarray(scales)
    return float(y @ y - 1.0)


def select_follower_points(vertices, ellipsoid, count=4, tolerance=0.2, seed=0):
    """Pick `count` well-spread near-surface points (seeded, reproducible).

    `ellipsoid` is (center, rotation, scales).  Candidates must satisfy
    |C| <= tolerance; the selection enforces pairwise spacing >= 1 mm and
    non-colinearity (every triangle among the chosen points has area above
    the floor).
    """
    center, rotation, scales = ellipsoid
    P = np.asarray(vertices, dtype=float).reshape(-1, 3)
    C = np.array([ellipsoid_level_set(p, center, rotation, scales) for p in P])
    candidates = P[np.abs(C) <= tolerance]
    if len(candidates) < count:
        raise ValueError(
            f"only {len(candidates)} near-surface candidates, need {count}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidates))
    chosen = []
    for idx in order:
        p = candidates[idx]
        if any(np.linalg.norm(p - c) < FOLLOWER_MIN_SPACING for c in chosen):
            continue
        if len(chosen) >= 2:
            ok = all(
                0.5 * np.linalg.norm(np.cross(b - a, p - a)) >= FOLLOWER_MIN_TRIANGLE
                for i, a in enumerate(chosen) for b in chosen[i + 1:])
            if not ok:
                continue
        chosen.append(p)
        if len(chosen) == count:
            return np.array(chosen)
    raise ValueError("could not find enough non-colinear follower points")


# ---------------------------------------------------------------------------
# extreme poses and pair extraction
# ---------------------------------------------------------------------------

@dataclass
class ExtremePoseSet:
    """Per adjacent-bone-pair extreme relative orientations (rotation coords).

    poses maps pair name -> list of 3-vectors.  Pair names follow the
    builder's "<lower>-<upper>" convention.
    """

    poses: dict = field(default_factory=dict)

    def pairs(self):
        return list(self.poses.keys())


@dataclass
class PairContext:
    """Isolated two-bone sub-assembly for per-pair simulations."""

    assembly: object            # 2-body assembly, lower bone welded
    pair_name: str
    lower: int                  # body ids in the parent assembly
    upper: int
    rot_slice: slice            # upper-joint rotation DoFs in the sub-assembly
    rest_translation: np.ndarray
    disc_center: np.ndarray     # in lower-body frame


def extract_pair_assembly(assembly, lower, upper):
    """Build the isolated pair sub-assembly for bodies (lower, upper)."""
    model = assembly.skeleton
    bl, bu = model.bodies[lower], model.bodies[upper]
    sub_lower = sk.Body(bl.name, bl.mass, bl.inertia, -1, joint_type=sk.FREE6,
                        joint_transform=np.eye(4), com=bl.com, geometry=bl.geometry)
    sub_upper = sk.Body(bu.name, bu.mass, bu.inertia, 0,
                        joint_type=bu.joint_type,
                        joint_transform=bu.joint_transform, com=bu.com,
                        geometry=bu.geometry)
    sub_model = sk.SkeletonModel([sub_lower, sub_upper], gravity=model.gravity)
    remap = {lower: 0, upper: 1}

    from .assembly import DiscUnit, TorsoAssembly
    from .constraints import FacetConstraint, LigamentPath, LigamentSegment
    from .fem import Attachment, DiscSystem

    discs = []
    for d in assembly.discs:
        if d.lower_body == lower and d.upper_body == upper:
            sys_old = d.system
            atts = [Attachment(a.vertex_id, remap[a.body_id],
                               a.body_local_point, a.weight)
                    for a in sys_old.attachments]
            system = DiscSystem(
                mesh=sys_old.mesh, energies=sys_old.energies, attachments=atts,
                elastic_weight=sys_old.elastic_weight,
                volume_weight=sys_old.volume_weight,
                gradients=sys_old.gradients,
                elastic_weights=sys_old.elastic_weights,
                volume_weights=sys_old.volume_weights,
                attach_vertex_ids=sys_old.attach_vertex_ids,
                attach_weights=sys_old.attach_weights,
                global_matrix=sys_old.global_matrix,
                global_matrix_factorization=sys_old.global_matrix_factorization)
            discs.append(DiscUnit(d.name, system, 0, 1))

    ligaments = []
    for path in assembly.ligaments:
        segs = [LigamentSegment(remap[s.body_a], s.local_a, remap[s.body_b],
                                s.local_b, s.l_max)
                for s in path.segments
                if {s.body_a, s.body_b} == {lower, upper}]
        if segs:
            ligaments.append(LigamentPath(path.name, segs, path.dof_class))

    facets = []
    for f in assembly.facets:
        if {f.host_body, f.follower_body} == {lower, upper}:
            facets.append(FacetConstraint(
                f.name, remap[f.host_body], f.center, f.rotation, f.scales,
                remap[f.follower_body], f.followers, f.tolerance))

    n = sub_model.num_dof
    kp = np.zeros(n)
    kd = np.zeros(n)
    sl_full = model.joint_slice(upper)
    sl_sub = sub_model.joint_slice(1)
    kp[sl_sub] = assembly.pd_kp[sl_full]
    kd[sl_sub] = assembly.pd_kd[sl_full]
    pas_kp = np.zeros(n)
    pas_kd = np.zeros(n)
    pas_kp[sl_sub] = assembly.passive_kp[sl_full]
    pas_kd[sl_sub] = assembly.passive_kd[sl_full]

    anchor = Anchor(body=0, local=np.zeros(3), target_point=np.zeros(3),
                    target_rotation=np.eye(3))
    sub = TorsoAssembly(skeleton=sub_model, discs=discs, ligaments=ligaments,
                        facets=facets, pd_kp=kp, pd_kd=kd, passive_kp=pas_kp,
                        passive_kd=pas_kd, step_rate=assembly.step_rate,
                        baumgarte=assembly.baumgarte,
                        fem_iterations=assembly.fem_iterations,
                        anchors=[anchor])

    Tj = bu.joint_transform
    rest_translation = Tj[:3, 3].copy()
    if discs:
        disc_world = discs[0].system.mesh.vertices.mean(axis=0)
        disc_center = disc_world  # lower body sits at the origin at rest
    else:
        disc_center = rest_translation * 0.5
    return PairContext(assembly=sub, pair_name=f"{bl.name}-{bu.name}",
                       lower=lower, upper=upper, rot_slice=sub_model.joint_slice(1),
                       rest_translation=rest_translation, disc_center=disc_center)


def adjacent_free_pairs(assembly):
    """(lower, upper) body pairs connected by a free joint with a disc."""
    disc_pairs = {(d.lower_body, d.upper_body) for d in assembly.discs}
    out = []
    for i, b in enumerate(assembly.skeleton.bodies):
        if b.parent >= 0 and b.joint_type == sk.FREE6 and (b.parent, i) in disc_pairs:
            out.append((b.parent, i))
    return out


# ---------------------------------------------------------------------------
# pose feasibility
# ---------------------------------------------------------------------------

def pose_reached(ctx, state, pose_rotvec):
    """Orientation within tolerance and translation near the pose's natural
    rotate-about-disc-center value."""
    q = state.q
    sl = ctx.rot_slice
    R_cur = exp_rotvec(q[sl.start:sl.start + 3])
    R_tgt = exp_rotvec(pose_rotvec)
    ang = np.linalg.norm(log_rotmat(R_cur.T @ R_tgt))
    if ang > POSE_ANGLE_TOL:
        return False
    p_cur = ctx.rest_translation + q[sl.start + 3:sl.start + 6]
    p_ref = ctx.disc_center + R_tgt @ (ctx.rest_translation - ctx.disc_center)
    return np.linalg.norm(p_cur - p_ref) <= POSE_TRANSLATION_GUARD


def drive_to_pose(ctx, pose_rotvec, target_rotvec=None, duration=0.5,
                  check_every=5):
    """Simulate the pair with a PD target; True if the pose is reached."""
    asm = ctx.assembly
    targets = asm.pd_targets.copy()
    sl = ctx.rot_slice
    tgt = pose_rotvec if target_rotvec is None else target_rotvec
    targets[sl.start:sl.start + 3] = tgt
    asm_t = asm.replace(pd_targets=targets)
    state = asm_t.initial_state()
    n_steps = int(round(duration * asm_t.step_rate))
    for k in range(n_steps):
        state, _ = step(asm_t, state, step_index=k)
        if (k + 1) % check_every == 0 and pose_reached(ctx, state, pose_rotvec):
            return True
    return pose_reached(ctx, state, pose_rotvec)


def pose_feasible(ctx, pose_rotvec, trials, rng, duration=0.5):
    """A pose is feasible if some trial's trajectory reaches it.

    The first trials deterministically overdrive toward the pose (random
    exploration rarely beats aiming); the rest draw random PD targets around
    and beyond it.
    """
    for gain in (1.25, 1.0):
        if drive_to_pose(ctx, pose_rotvec, np.asarray(pose_rotvec) * gain,
                         duration):
            return True
    for _ in range(max(trials - 2, 0)):
        tgt = np.asarray(pose_rotvec) * rng.uniform(0.9, 1.6) \
            + rng.normal(scale=0.03, size=3)
        if drive_to_pose(ctx, pose_rotvec, tgt, duration):
            return True
    return False


# ---------------------------------------------------------------------------
# ligament identification
# ---------------------------------------------------------------------------

class UnreachablePoseError(RuntimeError):
    def __init__(self, pair, pose):
        self.pair = pair
        self.pose = np.asarray(pose)
        deg = np.rad2deg(self.pose)
        super().__init__(
            f"extreme pose {np.round(deg, 2)} deg of pair {pair} is unreachable "
            "even at the initial ligament lengths")


DOF_CLASS_ORDER = ("sagittal", "lateral", "axial", "coupled")


@dataclass
class IdentificationResult:
    l_max: dict                # (ligament name, pair name) -> identified value
    assembly: object           # assembly with updated segment lengths
    shrink_steps: dict = field(default_factory=dict)


def identify_ligament_lengths(assembly, extremes, step_fraction=0.98,
                              trials=64, seed=0, trial_duration=0.5,
                              reset_to_generous=True, generous_factor=2.0):
    """Shorten per-segment maximum lengths to the feasibility boundary.

    Single-axis ligament classes are processed before coupled ones, in a
    fixed documented order (sagittal, lateral, axial, coupled; alphabetical
    within a class).  Each segment shrinks multiplicatively until some
    extreme pose of its bone pair stops being reachable, then reverts one
    step.  Raises UnreachablePoseError if a pose fails at the initial
    lengths.
    """
    if not extremes.poses:
        raise ValueError("extreme pose set is empty")
    if not (0 < step_fraction < 1):
        raise ValueError("step_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    table = {}
    steps_log = {}

    pair_ids = adjacent_free_pairs(assembly)
    name_of = {p: f"{assembly.skeleton.bodies[p[0]].name}-"
                  f"{assembly.skeleton.bodies[p[1]].name}" for p in pair_ids}

    for (lower, upper) in pair_ids:
        pair_name = name_of[(lower, upper)]
        poses = extremes.poses.get(pair_name)
        if not poses:
            continue
        ctx = extract_pair_assembly(assembly, lower, upper)
        if reset_to_generous:
            for path in ctx.assembly.ligaments:
                for seg, rest in zip(path.segments,
                                     path.rest_lengths(ctx.assembly.skeleton)):
                    seg.l_max = generous_factor * rest
        for pose in poses:
            if not pose_feasible(ctx, pose, trials, rng, trial_duration):
                raise UnreachablePoseError(pair_name, pose)

        ordered = sorted(ctx.assembly.ligaments,
                         key=lambda p: (DOF_CLASS_ORDER.index(p.dof_class)
                                        if p.dof_class in DOF_CLASS_ORDER
                                        else len(DOF_CLASS_ORDER), p.name))
        for path in ordered:
            for seg in path.segments:
                shrinks = 0
                while True:
                    trial_l = seg.l_max * step_fraction
                    seg.l_max = trial_l
                    ok = all(pose_feasible(ctx, pose, trials, rng,
                                           trial_duration) for pose in poses)
                    if not ok:
                        seg.l_max = trial_l / step_fraction
                        break
                    shrinks += 1
                    if shrinks > 400:  # safety net; never hit in practice
                        break
                table[(path.name, pair_name)] = seg.l_max
                steps_log[(path.name, pair_name)] = shrinks

    new_assembly = apply_ligament_lengths(assembly, table, name_of)
    return IdentificationResult(l_max=table, assembly=new_assembly,
                                shrink_steps=steps_log)


def apply_ligament_lengths(assembly, table, pair_names=None):
    """Copy of the assembly with identified l_max values written in."""
    import copy

    if pair_names is None:
        pair_ids = adjacent_free_pairs(assembly)
        pair_names = {p: f"{assembly.skeleton.bodies[p[0]].name}-"
                         f"{assembly.skeleton.bodies[p[1]].name}"
                      for p in pair_ids}
    by_pair = {}
    for (lower, upper), pname in pair_names.items():
        by_pair[frozenset((lower, upper))] = pname
    ligaments = copy.deepcopy(assembly.ligaments)
    for path in ligaments:
        for seg in path.segments:
            pname = by_pair.get(frozenset((seg.body_a, seg.body_b)))
            if pname is None:
                continue
            key = (path.name, pname)
            if key in table:
                seg.l_max = table[key]
    return assembly.replace(ligaments=ligaments)
