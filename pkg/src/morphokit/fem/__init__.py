"""P1 finite elements for Laplace and reaction-diffusion problems on static and growing meshes."""
from .assembly import AssemblyError, assemble, edge_mass_matrix, mass_matrix, stiffness_matrix
from .growth import GrowthSeries, step_rd_growing
from .kinetics import (
    ReactionModel,
    gierer_meinhardt,
    growth_rate,
    ligand_receptor,
    model_from_config,
    polynomial,
    schnakenberg,
    unstable_band,
)
from .simulate import Schedule, equilibrate, read_frame, simulate, write_frame, write_trajectory
from .solver import (
    BoundaryCondition,
    Dirichlet,
    FieldState,
    Neumann,
    Robin,
    SolverError,
    Stepper,
    noisy_state,
    solve_laplace,
    step_rd,
    uniform_state,
)
