"""Flow-equation solver and verifier on the ultrastatic cylinder, in the LPA.

The package computes the scalar flow function and its derivatives from
mode-resolved retarded kernels, solves the resulting fully nonlinear parabolic
flow by a smoothed continuous iteration (with plain Newton and direct marching
as cross-checks), and numerically certifies the estimates the construction
rests on: retarded support, ratio bounds of Groenwall type, tame seminorm
inequalities, maximum principles, and graded bounds on the linearized inverse.
"""

from .background import (
    Background,
    ConfigurationError,
    ModeBasis,
    StateKernelModes,
    build_background,
    cutoff_eval,
    f_l1_norm,
    regulator_k_derivative,
    smooth_transition,
)
from .flowfn import (
    FlowTable,
    TableRangeError,
    a2_value,
    check_sigma_window,
    flow_value,
    sigma_value,
    tabulate,
)
from .graded import (
    CompatibilityError,
    FlowGrid,
    GridField,
    GridError,
    SmoothingSchedule,
    boundary_lift,
    seminorm,
    slice_sobolev_norm,
    smoothing_apply,
    tame_fit,
)
from .linsolve import (
    ConductivityField,
    PositivityError,
    apply_linearized,
    build_conductivity,
    inverse_graded_check,
    max_principle_certificate,
    solve_linearized,
)
from .nashmoser import (
    SolverParams,
    SolveReport,
    StallError,
    WindowExitError,
    march_solve,
    nash_moser_solve,
    newton_solve,
    rg_apply,
)
from .propagators import (
    KernelCache,
    MoellerMatrix,
    PropagatorKernel,
    SeriesDivergenceError,
    free_retarded_apply,
    interacting_retarded_neumann,
    interacting_retarded_volterra,
    moeller_apply,
    normal_ordered_diagonal,
    verify_intertwining,
)

__version__ = "0.1.0"
