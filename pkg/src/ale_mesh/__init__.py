"""Constrained spring-relaxation ALE maps for triangulated closed
evolving surfaces."""

from . import _threads  # noqa: F401  (must run before numpy loads BLAS)

from .errors import (
    AleMeshError, ConfigError, DegenerateEdgeError, DegenerateElementError,
    MeshError, ProjectionError, SingularSurfaceError, StepFailure,
    SurfaceError,
)
from .geometry import (
    EQUILATERAL_RATIO, QualityReport, TriMesh, TriangleMetrics, build_mesh,
    extract_isosurface_mesh, generate_icosphere, generate_torus_mesh,
    mesh_quality, perturb_positions, triangle_metrics,
)
from .obj_io import read_obj, write_obj
from .surface import (
    LevelSetSurface, dumbbell, expanding_sphere, four_hole,
    literature_ale_map, normal_velocity, project, static_sphere,
    surface_from_name, torus,
)
from .forces import (
    ForceConfig, ale_velocity, angle_force, edge_forces, spring_force,
    spring_force_jacobian, target_lengths,
)
from .dae import (
    ButcherTableau, DAEState, NewtonSettings, RadauStats,
    assemble_stage_jacobian, radau_step, radau_tableau,
)
from .splitting import (
    EvolutionMethod, Trajectory, adaptive_splitting_step, evolve,
    normal_step, relax_static, splitting_step, w_relax_step,
)

__version__ = "0.1.0"
