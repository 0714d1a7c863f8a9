"""Solver and rare-event analysis toolkit for the 3-D stochastic hydrostatic
system with transport noise on the periodic slab.

Layout:
    grid         -- discrete fields, transforms, vertical stencils, snapshots
    operators    -- vertical mean/fluctuation split, hydrostatic projection,
                    diagnostic vertical velocity, pressure term, Robin form
    noise        -- transport-noise families, assumption checks, corrections
    stepping     -- drift/diffusion assembly and IMEX time integration
    tangent      -- linearization and exact discrete adjoint of the step
    diagnostics  -- energy functionals, Gronwall budgets, tail statistics
    ldp          -- rate-function evaluation/minimization, Monte Carlo
    ensemble     -- vectorized path batches for Monte Carlo
    verify       -- numerical verification suites
    config, cli  -- run configuration and the command-line harness
"""

from .errors import (
    BlowupDetected,
    ConfigError,
    ControlBudgetExceeded,
    Diverged,
    HydroLdpError,
    InvalidField,
    MissingBoundaryCondition,
    ModeMismatch,
    ParabolicityViolation,
    SolverError,
)
from .grid import (
    NEUMANN_BOTH,
    BoundaryCondition,
    Field,
    GridSpec,
    SpectrumView,
    forward_transform,
    horizontal_gradient,
    inverse_transform,
    read_field,
    robin_top,
    vertical_derivative,
    write_field,
)
from .noise import (
    ITO,
    STRATONOVICH,
    NoiseFamily,
    build_kraichnan_family,
    check_noise_assumptions,
    read_noise_family,
    stratonovich_corrections,
    turbulent_pressure,
    write_noise_family,
)
from .operators import (
    BarotropicField,
    BuoyancyProfile,
    baroclinic_pressure_gradient,
    curl_free_part,
    diagnostic_vertical_velocity,
    fluctuation,
    hydrostatic_project,
    robin_form,
    vertical_average,
)
from .stepping import (
    ForcingSpec,
    State,
    StepperConfig,
    Trajectory,
    diffusion,
    drift,
    integrate,
    step_skeleton,
    step_spde,
    step_tilted,
)
from .diagnostics import EnergySample, gronwall_budget, sample_energies, tail_probability_scan
from .ldp import (
    ControlPath,
    LdpProblem,
    LdpReport,
    RareEvent,
    adjoint_gradient,
    forward_map,
    mc_small_noise,
    minimize_rate,
    skeleton_apriori_check,
)

__version__ = "0.1.0"
