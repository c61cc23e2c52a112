"""Penalized-BSDE solver for combined regular/singular stochastic control.

The optimal value is estimated as the increasing limit of penalized BSDE
values Y^j_0; approximately optimal feedback controls are read off the
driver argmax, and the terminal face-lift removes the terminal jump of the
constrained solution.
"""

from .bsde import (
    BsdeSolution,
    PenaltyReport,
    RegressionBasis,
    eval_z_at,
    solve_bsde,
    solve_penalized_sequence,
)
from .errors import ConfigError, NumericalError, PenbsdeError, PreconditionError, UnknownModelError
from .facelift import FaceliftConfig, facelift_h, facelift_terminal, terminal_jump_diagnostic
from .hamiltonian import DriverEval, eval_p, eval_pj, eval_q, pj_monotone_report
from .model import (
    ControlGrid,
    Dimensions,
    ModelSpec,
    PathBatch,
    builtin_model,
    builtin_names,
    validate_model,
)
from .oracle import (
    Grid1D,
    brute_force_dp,
    closed_form_linear,
    coarse_lattice_value,
    default_grid1d,
    solve_hjb_fd,
)
from .policy import (
    Policy,
    PolicyValue,
    constant_policy,
    evaluate_policy_strong,
    evaluate_policy_weak,
    extract_feedback,
)
from .simulate import (
    BrownianBatch,
    StatePathBatch,
    TimeGrid,
    dump_paths,
    euler_controlled,
    euler_uncontrolled,
    gen_brownian,
    girsanov_weights,
)

__version__ = "0.1.0"
