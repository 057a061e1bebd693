"""Linear-quadratic mean field games: ODE solvers, finite-player verification and a social-optimum comparator."""

from .equilibrium import (
    AffinePolicy,
    EquilibriumSolution,
    SolverOptions,
    controlled_mean,
    feedback,
    solve,
    solve_gmfg,
    solve_mfg,
    solve_mpmfg,
)
from .errors import (
    AsymmetricWeights,
    ConfigError,
    Divergence,
    IndexOutOfRange,
    InvalidGrid,
    LengthMismatch,
    MfglqError,
    OutOfHorizon,
    SingularSystem,
    ValidationError,
)
from .fbsolver import FbProblem, FbSolution, newton_solve, picard_solve, residual
from .graphon import GraphonSpec, discretize, evaluate, step_from_weights
from .mfc import OptimizerOptions, SocialCostReport, price_of_anarchy, social_cost
from .model import GraphonModel, LqCoefficients, PopulationModel, TimeGrid, make_grid, validate
from .odecore import GridFunction, rk4_backward, rk4_forward, solve_riccati
from .simulate import NashGapReport, SimConfig, convergence_sweep, estimate_nash_gap, simulate_population

__version__ = "0.1.0"
