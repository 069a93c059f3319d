"""torsim: hybrid deformable/rigid dynamics for an anatomically detailed torso."""

__version__ = "0.1.0"

from .tetmesh import TetMesh, build_elliptical_prism_mesh, load_tet_mesh, save_tet_mesh
from .fem import (
    Attachment,
    DiscSystem,
    EnergyTerm,
    build_disc_system,
    coupling_force,
    project_corotational,
    project_volume,
    quasistatic_solve,
    variational_energy,
)
from .skeleton import (
    Body,
    GeneralizedState,
    SkeletonModel,
    forward_dynamics,
    integrate,
    mass_matrix,
    point_jacobian,
)
