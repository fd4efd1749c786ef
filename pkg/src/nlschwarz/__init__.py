"""Non-overlapping optimized Schwarz solver for 2D nonlinear Schrodinger
and Gross-Pitaevskii problems, with Robin and Pade-absorbing transmission
conditions and a probed interface preconditioner."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DimensionError,
    DivergedError,
    DomainError,
    NlschwarzError,
    NormalizationError,
    NotConvergedError,
    SingularMatrixError,
)
from .fem import Grid, Nonlinearity, PotentialField
from .linalg import KrylovConfig, LUFactorization, krylov_solve, lu_factorize, lu_solve
from .transmission import (
    AuxiliaryTraces,
    PadeCoefficients,
    TransmissionSpec,
    apply_discrete_tc,
    pade_coefficients,
)
from .subdomain import (
    FixedPointConfig,
    LocalProblem,
    LocalSolution,
    advance_time,
    solve_local_linear,
    solve_local_nonlinear,
)
from .schwarz import (
    Decomposition,
    InterfaceVector,
    SchwarzConfig,
    SchwarzSolver,
    SimulationResult,
    compute_outgoing_fluxes,
    decompose,
)
from .precond import (
    BlockOperator,
    PreconditionerBlocks,
    apply_P_inverse,
    assemble_P,
    build_blocks,
    build_blocks_per_subdomain,
    preconditioned_step,
)
from .gpe import (
    EnergyReport,
    GpeConfig,
    energy_and_mu,
    gpe_run,
    gpe_solver,
    load_ground_state,
    reconstruct_valid_zone,
    rotation_matrix,
    transformed_potential,
    trap_potential,
    valid_zone,
    valid_zone_grid,
)

__all__ = [name for name in dir() if not name.startswith("_")]
