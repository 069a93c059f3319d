"""Procedural torso builder (substitute for proprietary anatomical meshes).

Builds the default detailed model: 23 vertebrae (sacrum to C3) chained by
placeholder free joints, a rigid rib cage on a free joint, shoulder girdles
(sternoclavicular and acromioclavicular ball joints, scapulothoracic
ellipsoid constraint), head and limbs on ball joints, 22 procedural discs,
20 ligament tracks (440 segments), and 74 facet constraints.

Joint/DoF accounting of the default model (asserted by tests):
  free joints (24):  world->sacrum root, 22 intervertebral, thoracic->ribcage
  ball joints (17):  2 sternoclavicular, 2 acromioclavicular, 2 glenohumeral,
                     2 elbow, 2 wrist, 1 head, 2 hip, 2 knee, 2 ankle
  total DoF:         24*6 + 17*3 = 195
Constraint accounting:
  ligament segments: 20 tracks x 22 adjacent pairs           = 440
  facet followers:   44 spinal x 4 + 2 scapulothoracic x 4
                     + 28 costovertebral/costotransverse x 2 = 240
  total rigid constraints                                      680

Geometry conventions: y up, z anterior, x to the subject's right; every body
rests at identity orientation, so rest world positions double as body-local
offsets.  Vertebra rotational inertia uses the surrounding trunk slice (bone
plus soft tissue annulus), not the bare bone box; masses follow standard
anthropometric segment fractions of the subject mass, with vertebra shares
distributed proportionally to bone-box volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import skeleton as sk
from .assembly import DiscUnit, TorsoAssembly
from .constraints import Anchor, ContactPoint, FacetConstraint, LigamentPath, LigamentSegment
from .fem import build_disc_system
from .identify import ExtremePoseSet, fit_facet_ellipsoid, select_follower_points
from .tetmesh import build_elliptical_prism_mesh


# ---------------------------------------------------------------------------
# specification
# ---------------------------------------------------------------------------

@dataclass
class TorsoSpec:
    height: float = 1.70
    mass: float = 72.0
    spine_span: str = "full"        # "full" (sacrum..C3) or "lumbar" (sacrum..L1)
    include_ribcage: bool = True
    include_shoulders: bool = True  # clavicles + scapulae (+ scapulothoracic)
    include_head: bool = True
    include_arms: bool = True
    include_legs: bool = True
    disc_divisions: tuple = (3, 3, 2)
    attach_radius: float = 5e-3     # pairing radius for disc-bone attachments
    ligament_slack_factor: float = 2.0  # initial l_max = factor * rest length
    step_rate: float = 600.0
    seed: int = 0

    def validate(self):
        if self.height <= 0 or self.mass <= 0:
            raise ValueError("height and mass must be positive")
        if self.spine_span not in ("full", "lumbar"):
            raise ValueError(f"unknown spine_span {self.spine_span!r}")
        if self.include_arms and self.spine_span == "full" and not self.include_shoulders:
            raise ValueError("full-span arms require shoulders")
        if self.include_shoulders and not self.include_ribcage:
            raise ValueError("shoulders require the rib cage")


# per-region vertebra dimensions (width, depth, height, disc height) in m at
# 1.70 m subject height; disc height refers to the disc above the vertebra
_REGDIMS = {
    "sacrum": (0.100, 0.060, 0.080, 0.010),
    "lumbar": (0.050, 0.036, 0.028, 0.009),
    "thoracic": (0.042, 0.032, 0.020, 0.005),
    "cervical": (0.030, 0.024, 0.014, 0.004),
}
# trunk-slice cylinder radius used for vertebral inertia
_SLICE_RADIUS = {"sacrum": 0.14, "lumbar": 0.13, "thoracic": 0.11, "cervical": 0.05}

# disc energy weights per region (manually tuned for stable behavior)
_DISC_WEIGHTS = {
    "lumbar": (4.0e6, 2.0e7, 1.6e4),
    "thoracic": (2.5e6, 1.2e7, 1.2e4),
    "cervical": (1.2e6, 6.0e6, 6.0e3),
}

# PD gains (kp, kd) per joint kind, applied to rotational DoFs; damping is
# handled implicitly in the velocity update so it is free to be generous
_PD_GAINS = {
    "lumbar": (250.0, 25.0), "thoracic": (180.0, 20.0), "cervical": (50.0, 8.0),
    "ribcage": (250.0, 25.0), "sternoclavicular": (60.0, 8.0),
    "acromioclavicular": (40.0, 6.0), "glenohumeral": (60.0, 10.0),
    "elbow": (30.0, 5.0), "wrist": (8.0, 1.5), "head": (50.0, 8.0),
    "hip": (300.0, 30.0), "knee": (250.0, 25.0), "ankle": (120.0, 12.0),
}
_PASSIVE_ROT = {
    "lumbar": (4.0, 2.5), "thoracic": (3.0, 2.0), "cervical": (1.0, 1.0),
    "ribcage": (4.0, 2.5), "sternoclavicular": (2.0, 1.5),
    "acromioclavicular": (2.0, 1.5), "glenohumeral": (2.0, 1.5),
    "elbow": (1.0, 1.0), "wrist": (0.5, 0.3), "head": (1.0, 1.2),
    "hip": (4.0, 3.0), "knee": (3.0, 3.0), "ankle": (2.0, 1.5),
}
_VERTEBRAL_TRANS_DAMPING = 300.0  # N s/m; no stiffness (discs own the load path)
# the rib cage has no disc: costal-cartilage stiffness carries its weight
_RIBCAGE_TRANS_SPRING = (2.0e5, 800.0)  # N/m, N s/m

# anthropometric mass fractions (sum to 1.0 with both limbs present)
_MASS_FRACTIONS = {
    "head": 0.081, "sacrum": 0.150, "vertebrae_total": 0.140,
    "ribcage": 0.187, "clavicle": 0.003, "scapula": 0.007,
    "upper_arm": 0.028, "forearm": 0.016, "hand": 0.006,
    "thigh": 0.100, "shank": 0.0465, "foot": 0.0145,
}

# approximate per-pair extreme relative orientations in degrees
# (flexion, extension, lateral bending, axial rotation); editable input data,
# not ground truth
_EXTREME_TABLE = {
    "lumbosacral": (10.0, 4.0, 3.0, 1.5),
    "lumbar": (12.0, 4.5, 5.0, 2.0),
    "thoracolumbar": (8.0, 3.0, 4.0, 2.0),
    "thoracic": (4.5, 2.5, 5.0, 6.0),
    "cervicothoracic": (8.0, 4.0, 5.0, 4.0),
    "cervical": (9.0, 6.0, 6.0, 5.0),
}

# soft joint-range placeholders (radians) for the shoulder chain; flagged as
# uncalibrated tuning knobs
_SOFT_LIMITS = {
    "sternoclavicular": 0.45, "acromioclavicular": 0.55, "glenohumeral": 1.75,
}
_SOFT_LIMIT_KP = 60.0


def _box_inertia(mass, size):
    sx, sy, sz = size
    return mass / 12.0 * np.diag([sy**2 + sz**2, sx**2 + sz**2, sx**2 + sy**2])


def _cylinder_inertia_y(mass, radius, height):
    return np.diag([mass * (3 * radius**2 + height**2) / 12.0,
                    mass * radius**2 / 2.0,
                    mass * (3 * radius**2 + height**2) / 12.0])


@dataclass
class _Draft:
    """Mutable scratch state while assembling the model."""

    spec: TorsoSpec
    scale: float
    bodies: list = field(default_factory=list)
    rest_world: list = field(default_factory=list)  # body-frame origins at rest
    kinds: list = field(default_factory=list)       # joint kind tags
    levels: list = field(default_factory=list)      # spine level info or None

    def add(self, name, mass, inertia, parent, joint_type, origin_world,
            kind, geometry=None, com_local=(0.0, 0.0, 0.0)):
        origin_world = np.asarray(origin_world, dtype=float)
        T = np.eye(4)
        if parent < 0:
            T[:3, 3] = origin_world
        else:
            T[:3, 3] = origin_world - self.rest_world[parent]
        body = sk.Body(name, mass, inertia, parent, joint_type=joint_type,
                       joint_transform=T, com=np.asarray(com_local, float),
                       geometry=geometry or {})
        self.bodies.append(body)
        self.rest_world.append(origin_world)
        self.kinds.append(kind)
        self.levels.append(None)
        return len(self.bodies) - 1


def _spine_levels(spec):
    """Names, regions, and dimensions for the requested span, bottom-up."""
    s = spec.height / 1.70
    levels = [("sacrum", "sacrum")]
    levels += [(f"L{i}", "lumbar") for i in range(5, 0, -1)]
    if spec.spine_span == "full":
        levels += [(f"T{i}", "thoracic") for i in range(12, 0, -1)]
        levels += [(f"C{i}", "cervical") for i in range(7, 2, -1)]
    out = []
    for name, region in levels:
        w, d, h, dh = _REGDIMS[region]
        out.append({"name": name, "region": region, "w": w * s, "d": d * s,
                    "h": h * s, "disc_above": dh * s})
    return out


def _pair_region(lower_level, upper_level):
    lo, up = lower_level["region"], upper_level["region"]
    if lo == "sacrum":
        return "lumbosacral"
    if lo == "lumbar" and up == "lumbar":
        return "lumbar"
    if lo == "lumbar" and up == "thoracic":
        return "thoracolumbar"
    if lo == "thoracic" and up == "thoracic":
        return "thoracic"
    if lo == "thoracic" and up == "cervical":
        return "cervicothoracic"
    return "cervical"


# ligament waypoint templates: name -> (dof_class, fn(rx, rz, level_index))
# giving the (x, z) offset of the track's waypoint on a vertebra
def _ligament_templates():
    def fixed(x_fac, z_fac):
        return lambda rx, rz, k: (x_fac * rx, z_fac * rz)

    def oblique(sign, direction):
        def fn(rx, rz, k):
            r = 1.15 * max(rx, rz)
            ang = sign * np.deg2rad(25.0) * k * direction
            return (r * np.sin(ang) + sign * 0.55 * rx,
                    -r * np.cos(ang) * 0.8 - 0.3 * rz)
        return fn

    return [
        ("anterior_longitudinal", "sagittal", fixed(0.0, 1.0)),
        ("posterior_longitudinal", "sagittal", fixed(0.0, -0.9)),
        ("ligamentum_flavum", "sagittal", fixed(0.0, -1.3)),
        ("interspinous", "sagittal", fixed(0.0, -1.9)),
        ("supraspinous", "sagittal", fixed(0.0, -2.4)),
        ("deep_posterior", "sagittal", fixed(0.0, -0.6)),
        ("intertransverse_left", "lateral", fixed(-1.7, -0.4)),
        ("intertransverse_right", "lateral", fixed(1.7, -0.4)),
        ("lateral_left", "lateral", fixed(-1.2, 0.0)),
        ("lateral_right", "lateral", fixed(1.2, 0.0)),
        ("oblique_ascending_left", "axial", oblique(-1, 1)),
        ("oblique_ascending_right", "axial", oblique(1, 1)),
        ("oblique_descending_left", "axial", oblique(-1, -1)),
        ("oblique_descending_right", "axial", oblique(1, -1)),
        ("capsular_left", "coupled", fixed(-1.1, -1.2)),
        ("capsular_right", "coupled", fixed(1.1, -1.2)),
        ("anterolateral_left", "coupled", fixed(-0.8, 0.8)),
        ("anterolateral_right", "coupled", fixed(0.8, 0.8)),
        ("posterolateral_left", "coupled", fixed(-0.6, -1.5)),
        ("posterolateral_right", "coupled", fixed(0.6, -1.5)),
    ]


def _facet_process_points(center, scales, rng):
    """Vertex cloud on an analytic ellipsoid patch (the annotated process)."""
    pts = [center + scales * np.array([np.cos(t), np.sin(t), 0.0])
           for t in np.linspace(0.0, 2 * np.pi, 8, endpoint=False)]
    pts += [center + scales * np.array([0.0, 0.0, 1.0]),
            center + scales * np.array([0.0, 0.0, -1.0]),
            center + scales * np.array([np.sqrt(0.5), 0.0, np.sqrt(0.5)]),
            center + scales * np.array([0.0, np.sqrt(0.5), -np.sqrt(0.5)])]
    return np.array(pts)


def _project_to_surface(points, center, rotation, scales):
    """Radially project points onto the C = 0 level set."""
    out = np.array(points, dtype=float)
    for i, p in enumerate(out):
        y = rotation.T @ (p - center) / scales
        r = np.linalg.norm(y)
        if r < 1e-12:
            raise ValueError("cannot project the ellipsoid center")
        out[i] = center + rotation @ (y / r * scales)
    return out


def build_procedural_torso(spec=None):
    """Assemble the default coupled model from the procedural templates."""
    spec = spec or TorsoSpec()
    spec.validate()
    s = spec.height / 1.70
    rng = np.random.default_rng(spec.seed)
    draft = _Draft(spec=spec, scale=s)
    levels = _spine_levels(spec)

    total_mass = spec.mass
    frac = _MASS_FRACTIONS
    # vertebra masses: proportional to bone-box volume within the vertebral share
    vols = [lv["w"] * lv["d"] * lv["h"] for lv in levels[1:]]
    vert_share = frac["vertebrae_total"] * total_mass
    vert_masses = [vert_share * v / sum(vols) for v in vols]

    hip_y = (0.06 + 0.40 + 0.43) * s if spec.include_legs else 0.0
    sacrum_y = hip_y + 0.06 * s

    # --- spinal column -----------------------------------------------------
    spine_ids = []
    y = sacrum_y
    for li, lv in enumerate(levels):
        region = lv["region"]
        size = (lv["w"], lv["h"], lv["d"])
        if li == 0:
            mass = frac["sacrum"] * total_mass
            inertia = _cylinder_inertia_y(mass, _SLICE_RADIUS[region] * s, lv["h"])
            bid = draft.add(lv["name"], mass, inertia, -1, sk.FREE6,
                            (0.0, y, 0.0), "root",
                            geometry={"type": "box", "size": size,
                                      "center": (0.0, 0.0, 0.0)})
        else:
            mass = vert_masses[li - 1]
            inertia = _cylinder_inertia_y(mass, _SLICE_RADIUS[region] * s, lv["h"])
            prev = levels[li - 1]
            y = y + prev["h"] / 2 + prev["disc_above"] + lv["h"] / 2
            bid = draft.add(lv["name"], mass, inertia, spine_ids[-1], sk.FREE6,
                            (0.0, y, 0.0), region,
                            geometry={"type": "box", "size": size,
                                      "center": (0.0, 0.0, 0.0)})
        draft.levels[bid] = lv
        spine_ids.append(bid)

    # --- rib cage ----------------------------------------------------------
    ribcage_id = None
    if spec.include_ribcage and spec.spine_span == "full":
        t7 = spine_ids[[lv["name"] for lv in levels].index("T7")]
        rc_size = (0.26 * s, 0.32 * s, 0.19 * s)
        rc_center = np.array([0.0, draft.rest_world[t7][1] + 0.02 * s, 0.055 * s])
        mass = frac["ribcage"] * total_mass
        ribcage_id = draft.add("ribcage", mass, _box_inertia(mass, rc_size), t7,
                               sk.FREE6, rc_center, "ribcage",
                               geometry={"type": "box", "size": rc_size,
                                         "center": (0.0, 0.0, 0.0)})

    # --- shoulder girdle, arms, head, legs ----------------------------------
    side_ids = {}
    if spec.include_shoulders and ribcage_id is not None:
        for sgn, tag in ((1.0, "r"), (-1.0, "l")):
            rc = draft.rest_world[ribcage_id]
            sc_w = rc + np.array([sgn * 0.030 * s, 0.145 * s, 0.075 * s])
            ac_w = rc + np.array([sgn * 0.170 * s, 0.165 * s, -0.035 * s])
            m_cl = frac["clavicle"] * total_mass
            cl_size = (0.14 * s, 0.015 * s, 0.015 * s)
            clav = draft.add(f"clavicle_{tag}", m_cl, _box_inertia(m_cl, cl_size),
                             ribcage_id, sk.BALL3, sc_w, "sternoclavicular",
                             geometry={"type": "box", "size": cl_size,
                                       "center": tuple((ac_w - sc_w) / 2)},
                             com_local=(ac_w - sc_w) / 2)
            m_sc = frac["scapula"] * total_mass
            sc_size = (0.015 * s, 0.13 * s, 0.085 * s)
            blade_com = np.array([-sgn * 0.045 * s, -0.065 * s, -0.035 * s])
            scap = draft.add(f"scapula_{tag}", m_sc, _box_inertia(m_sc, sc_size),
                             clav, sk.BALL3, ac_w, "acromioclavicular",
                             geometry={"type": "box", "size": sc_size,
                                       "center": tuple(blade_com)},
                             com_local=blade_com)
            side_ids[f"scapula_{tag}"] = scap
            side_ids[f"gh_world_{tag}"] = ac_w + np.array(
                [sgn * 0.025 * s, -0.045 * s, 0.025 * s])

    if spec.include_arms:
        for sgn, tag in ((1.0, "r"), (-1.0, "l")):
            if f"scapula_{tag}" in side_ids:
                parent = side_ids[f"scapula_{tag}"]
                gh_w = side_ids[f"gh_world_{tag}"]
            else:
                parent = spine_ids[-1]  # reduced body: arms on the top vertebra
                top = draft.rest_world[parent]
                gh_w = top + np.array([sgn * 0.20 * s, 0.05 * s, 0.0])
            for seg, (length, thick, fr) in {
                    "upper_arm": (0.30 * s, 0.05 * s, frac["upper_arm"]),
                    "forearm": (0.26 * s, 0.04 * s, frac["forearm"]),
                    "hand": (0.18 * s, 0.03 * s, frac["hand"])}.items():
                m_seg = fr * total_mass
                size = (thick, length, thick)
                kind = {"upper_arm": "glenohumeral", "forearm": "elbow",
                        "hand": "wrist"}[seg]
                pid = draft.add(
                    f"{seg}_{tag}", m_seg, _box_inertia(m_seg, size),
                    parent, sk.BALL3, gh_w, kind,
                    geometry={"type": "box", "size": size,
                              "center": (0.0, -length / 2, 0.0)},
                    com_local=(0.0, -length / 2, 0.0))
                side_ids[f"{seg}_{tag}"] = pid
                parent = pid
                gh_w = gh_w + np.array([0.0, -length, 0.0])

    if spec.include_head:
        top = spine_ids[-1]
        head_joint = draft.rest_world[top] + np.array([0.0, 0.04 * s, 0.0])
        m_h = frac["head"] * total_mass
        h_size = (0.15 * s, 0.22 * s, 0.18 * s)
        side_ids["head"] = draft.add(
            "head", m_h, _box_inertia(m_h, h_size), top, sk.BALL3, head_joint,
            "head", geometry={"type": "box", "size": h_size,
                              "center": (0.0, 0.09 * s, 0.01 * s)},
            com_local=(0.0, 0.09 * s, 0.01 * s))

    if spec.include_legs:
        for sgn, tag in ((1.0, "r"), (-1.0, "l")):
            hip_w = np.array([sgn * 0.09 * s, hip_y, 0.0])
            parent = spine_ids[0]
            for seg, (length, thick, fr, kind) in {
                    "thigh": (0.43 * s, 0.07 * s, frac["thigh"], "hip"),
                    "shank": (0.40 * s, 0.05 * s, frac["shank"], "knee")}.items():
                m_seg = fr * total_mass
                size = (thick, length, thick)
                pid = draft.add(
                    f"{seg}_{tag}", m_seg, _box_inertia(m_seg, size), parent,
                    sk.BALL3, hip_w, kind,
                    geometry={"type": "box", "size": size,
                              "center": (0.0, -length / 2, 0.0)},
                    com_local=(0.0, -length / 2, 0.0))
                side_ids[f"{seg}_{tag}"] = pid
                parent = pid
                hip_w = hip_w + np.array([0.0, -length, 0.0])
            m_f = frac["foot"] * total_mass
            f_size = (0.08 * s, 0.06 * s, 0.24 * s)
            foot = draft.add(
                f"foot_{tag}", m_f, _box_inertia(m_f, f_size), parent, sk.BALL3,
                hip_w, "ankle",
                geometry={"type": "box", "size": f_size,
                          "center": (0.0, -0.03 * s, 0.06 * s)},
                com_local=(0.0, -0.03 * s, 0.06 * s))
            side_ids[f"foot_{tag}"] = foot

    model = sk.SkeletonModel(draft.bodies)

    # --- discs ---------------------------------------------------------------
    discs = []
    for li in range(len(levels) - 1):
        lo, up = spine_ids[li], spine_ids[li + 1]
        lv_lo, lv_up = levels[li], levels[li + 1]
        region = lv_up["region"]
        elastic, volume, attach = _DISC_WEIGHTS[region]
        semi_x = 0.45 * min(lv_lo["w"], lv_up["w"])
        semi_z = 0.45 * min(lv_lo["d"], lv_up["d"])
        gap = lv_lo["disc_above"]
        center_y = draft.rest_world[lo][1] + lv_lo["h"] / 2 + gap / 2
        mesh = build_elliptical_prism_mesh(semi_x, semi_z, gap,
                                           divisions=spec.disc_divisions,
                                           center=(0.0, center_y, 0.0))
        atts = []
        for vid in mesh.boundary_vertex_ids:
            v = mesh.vertices[vid]
            d_lo = abs(v[1] - (draft.rest_world[lo][1] + lv_lo["h"] / 2))
            d_up = abs(v[1] - (draft.rest_world[up][1] - lv_up["h"] / 2))
            if min(d_lo, d_up) > spec.attach_radius:
                continue
            body = lo if d_lo <= d_up else up
            atts.append((int(vid), body, v - draft.rest_world[body]))
        system = build_disc_system(mesh, elastic, volume, attach, atts)
        discs.append(DiscUnit(f"{lv_lo['name']}-{lv_up['name']}", system, lo, up))

    # --- ligaments -----------------------------------------------------------
    ligaments = []
    for name, dof_class, offset_fn in _ligament_templates():
        segments = []
        for li in range(len(levels) - 1):
            lo, up = spine_ids[li], spine_ids[li + 1]
            ox_lo, oz_lo = offset_fn(levels[li]["w"] / 2, levels[li]["d"] / 2, li)
            ox_up, oz_up = offset_fn(levels[li + 1]["w"] / 2,
                                     levels[li + 1]["d"] / 2, li + 1)
            pa = np.array([ox_lo, 0.0, oz_lo])
            pb = np.array([ox_up, 0.0, oz_up])
            rest = np.linalg.norm(
                (draft.rest_world[up] + pb) - (draft.rest_world[lo] + pa))
            segments.append(LigamentSegment(lo, pa, up, pb,
                                            spec.ligament_slack_factor * rest))
        ligaments.append(LigamentPath(name, segments, dof_class))

    # --- facets --------------------------------------------------------------
    facets = []
    for li in range(len(levels) - 1):
        lo, up = spine_ids[li], spine_ids[li + 1]
        lv_lo, lv_up = levels[li], levels[li + 1]
        disc_center_w = np.array([0.0, draft.rest_world[lo][1]
                                  + lv_lo["h"] / 2 + lv_lo["disc_above"] / 2, 0.0])
        for sgn, tag in ((1.0, "r"), (-1.0, "l")):
            # spherical sliding surface about the intervertebral center:
            # its radius reaches the posterior articular processes
            patch_w = np.array([sgn * 0.45 * lv_lo["w"],
                                disc_center_w[1] + 0.1 * lv_lo["h"],
                                -(lv_lo["d"] / 2 + 0.008 * s)])
            radius = np.linalg.norm(patch_w - disc_center_w)
            center_local = disc_center_w - draft.rest_world[lo]
            scales = np.array([radius, radius, radius])
            R = np.eye(3)
            # candidate inferior-process vertices of the upper bone, sampled
            # near the patch and projected onto the surface
            cand_w = patch_w + rng.normal(scale=2.5e-3, size=(16, 3))
            cand_w = _project_to_surface(cand_w, disc_center_w, R, scales)
            cand_up = cand_w - draft.rest_world[up]
            followers = select_follower_points(
                cand_up, (center_local + draft.rest_world[lo]
                          - draft.rest_world[up], R, scales),
                count=4, tolerance=0.2, seed=spec.seed + 97 * li + (sgn > 0))
            facets.append(FacetConstraint(
                name=f"facet_{lv_lo['name']}-{lv_up['name']}_{tag}",
                host_body=lo, center=center_local, rotation=R, scales=scales,
                follower_body=up, followers=followers, tolerance=0.2))

    if ribcage_id is not None:
        thoracic_ids = [spine_ids[i] for i, lv in enumerate(levels)
                        if lv["region"] == "thoracic"]
        thoracic_names = [lv["name"] for lv in levels if lv["region"] == "thoracic"]
        for t_id, t_name in zip(thoracic_ids, thoracic_names):
            lv = draft.levels[t_id]
            for sgn, tag in ((1.0, "r"), (-1.0, "l")):
                head_local = np.array([sgn * (lv["w"] / 2 + 0.004 * s), 0.0,
                                       -0.3 * lv["d"]])
                scales = np.array([0.012, 0.010, 0.006]) * s
                proc = _facet_process_points(head_local, scales, rng)
                c, R, S = fit_facet_ellipsoid(proc)
                anchor_w = draft.rest_world[t_id] + head_local
                # followers near the flat-axis pole: vertical settling of the
                # rib cage then moves them tangentially, not across the band
                pole = anchor_w + np.array([0.0, 0.0, -S[2]])
                foll_w = _project_to_surface(
                    pole + np.array([[1.5e-3, 0.0, 0.0], [-1.5e-3, 0.0, 0.0]]),
                    draft.rest_world[t_id] + c, R, S)
                facets.append(FacetConstraint(
                    name=f"costovertebral_{t_name}_{tag}", host_body=t_id,
                    center=c, rotation=R, scales=S, follower_body=ribcage_id,
                    followers=foll_w - draft.rest_world[ribcage_id],
                    tolerance=0.2))
        for t_name in ("T1", "T6"):
            t_id = spine_ids[[lv["name"] for lv in levels].index(t_name)]
            lv = draft.levels[t_id]
            for sgn, tag in ((1.0, "r"), (-1.0, "l")):
                tip_local = np.array([sgn * 1.6 * (lv["w"] / 2), 0.0,
                                      -1.0 * lv["d"]])
                scales = np.array([0.010, 0.008, 0.005]) * s
                proc = _facet_process_points(tip_local, scales, rng)
                c, R, S = fit_facet_ellipsoid(proc)
                anchor_w = draft.rest_world[t_id] + tip_local
                pole = anchor_w + np.array([0.0, 0.0, -S[2]])
                foll_w = _project_to_surface(
                    pole + np.array([[1.2e-3, 0.0, 0.0], [-1.2e-3, 0.0, 0.0]]),
                    draft.rest_world[t_id] + c, R, S)
                facets.append(FacetConstraint(
                    name=f"costotransverse_{t_name}_{tag}", host_body=t_id,
                    center=c, rotation=R, scales=S, follower_body=ribcage_id,
                    followers=foll_w - draft.rest_world[ribcage_id],
                    tolerance=0.2))

    if spec.include_shoulders and ribcage_id is not None:
        rc = draft.rest_world[ribcage_id]
        st_scales = np.array([0.145, 0.175, 0.105]) * s
        for sgn, tag in ((1.0, "r"), (-1.0, "l")):
            scap = side_ids[f"scapula_{tag}"]
            blade_w = draft.rest_world[scap] + np.array(
                [-sgn * 0.045 * s, -0.065 * s, -0.045 * s])
            cand_w = blade_w + np.array(
                [[sgn * 0.025 * s, 0.04 * s, 0.0], [sgn * 0.025 * s, -0.04 * s, 0.0],
                 [-sgn * 0.035 * s, 0.03 * s, 0.0], [-sgn * 0.035 * s, -0.05 * s, 0.0]])
            cand_w = _project_to_surface(cand_w, rc, np.eye(3), st_scales)
            facets.append(FacetConstraint(
                name=f"scapulothoracic_{tag}", host_body=ribcage_id,
                center=np.zeros(3), rotation=np.eye(3), scales=st_scales,
                follower_body=scap,
                followers=cand_w - draft.rest_world[scap], tolerance=0.2))

    # --- gains, passives, soft limits ---------------------------------------
    n = model.num_dof
    pd_kp = np.zeros(n)
    pd_kd = np.zeros(n)
    pas_kp = np.zeros(n)
    pas_kd = np.zeros(n)
    limit_lo = np.full(n, -np.inf)
    limit_hi = np.full(n, np.inf)
    limit_kp = np.zeros(n)
    for i, body in enumerate(model.bodies):
        kind = draft.kinds[i]
        sl = model.joint_slice(i)
        rot = slice(sl.start, sl.start + 3)
        if kind == "root":
            continue
        kp, kd = _PD_GAINS.get(kind, (50.0, 2.0))
        pd_kp[rot] = kp
        pd_kd[rot] = kd
        pkp, pkd = _PASSIVE_ROT.get(kind, (1.0, 0.3))
        pas_kp[rot] = pkp
        pas_kd[rot] = pkd
        if body.joint_type == sk.FREE6:
            trans = slice(sl.start + 3, sl.start + 6)
            if kind == "ribcage":
                pas_kp[trans], pas_kd[trans] = _RIBCAGE_TRANS_SPRING
            else:
                pas_kd[trans] = _VERTEBRAL_TRANS_DAMPING
        if kind in _SOFT_LIMITS:
            limit_lo[rot] = -_SOFT_LIMITS[kind]
            limit_hi[rot] = _SOFT_LIMITS[kind]
            limit_kp[rot] = _SOFT_LIMIT_KP

    # --- ground contact candidates -------------------------------------------
    contacts = []
    contact_bodies = [b for b in ("foot_l", "foot_r", "hand_l", "hand_r", "head")
                      if b in side_ids]
    contact_ids = [side_ids[b] for b in contact_bodies]
    contact_ids.append(spine_ids[0])
    if ribcage_id is not None:
        contact_ids.append(ribcage_id)
    for tag in ("thigh_l", "thigh_r", "shank_l", "shank_r",
                "forearm_l", "forearm_r", "upper_arm_l", "upper_arm_r"):
        if tag in side_ids:
            contact_ids.append(side_ids[tag])
    for bid in contact_ids:
        geom = model.bodies[bid].geometry
        if geom.get("type") != "box":
            continue
        cx, cy, cz = geom.get("center", (0, 0, 0))
        hx, hy, hz = np.asarray(geom["size"]) / 2.0
        for dx in (-hx, hx):
            for dy in (-hy, hy):
                for dz in (-hz, hz):
                    contacts.append(ContactPoint(bid, (cx + dx, cy + dy, cz + dz)))

    metadata = {
        "spec": spec,
        "spine_body_ids": spine_ids,
        "ribcage_id": ribcage_id,
        "named_bodies": dict(side_ids),
        "levels": [lv["name"] for lv in levels],
        "pair_names": [f"{levels[i]['name']}-{levels[i+1]['name']}"
                       for i in range(len(levels) - 1)],
        "pair_regions": [_pair_region(levels[i], levels[i + 1])
                         for i in range(len(levels) - 1)],
        "rest_world": np.array(draft.rest_world),
        "joint_kinds": list(draft.kinds),
        "free_joints": sum(1 for b in model.bodies if b.joint_type == sk.FREE6),
        "ball_joints": sum(1 for b in model.bodies if b.joint_type == sk.BALL3),
    }

    assembly = TorsoAssembly(
        skeleton=model, discs=discs, ligaments=ligaments, facets=facets,
        pd_kp=pd_kp, pd_kd=pd_kd, passive_kp=pas_kp, passive_kd=pas_kd,
        step_rate=spec.step_rate, contacts=contacts,
        limit_lo=limit_lo, limit_hi=limit_hi, limit_kp=limit_kp,
        metadata=metadata)
    return assembly


def default_extreme_poses(assembly):
    """ExtremePoseSet from the shipped approximate per-pair table."""
    meta = assembly.metadata
    poses = {}
    for pname, region in zip(meta["pair_names"], meta["pair_regions"]):
        flex, ext, lat, axial = np.deg2rad(_EXTREME_TABLE[region])
        poses[pname] = [
            np.array([flex, 0.0, 0.0]), np.array([-ext, 0.0, 0.0]),
            np.array([0.0, 0.0, lat]), np.array([0.0, 0.0, -lat]),
            np.array([0.0, axial, 0.0]), np.array([0.0, -axial, 0.0]),
        ]
    return ExtremePoseSet(poses=poses)


def lumbar_spec(**overrides):
    """Reduced sacrum..L1 column (6 bones, 5 discs, no cage/limbs)."""
    base = dict(spine_span="lumbar", include_ribcage=False,
                include_shoulders=False, include_head=False,
                include_arms=False, include_legs=False)
    base.update(overrides)
    return TorsoSpec(**base)


def reduced_body_spec(**overrides):
    """Lumbar column plus legs and arms, for trajectory optimization tasks."""
    base = dict(spine_span="lumbar", include_ribcage=False,
                include_shoulders=False, include_head=False,
                include_arms=True, include_legs=True)
    base.update(overrides)
    return TorsoSpec(**base)
