"""Numerical laboratory for double-phase parabolic problems.

Implicit time stepping of the regularized variable-exponent two-phase
diffusion equation, with continuation in the regularization parameter
and a verification harness for the gradient-integrability and
second-order regularity functionals the theory tracks.
"""

from .errors import (
    ConfigError,
    ContinuationStalled,
    DegenerateEvaluation,
    DomainError,
    DplabError,
    ExpressionError,
    GridMismatch,
    InadmissibleR,
    IncompleteCheckpoints,
    LinearSolveFailed,
    NewtonDiverged,
    WidthTooLarge,
)
from .expressions import Expression, parse_expression
from .grid import Grid, GridFunction, center_gradient, divergence, gradient, hessian
from .flux import (
    FluxEval,
    FluxPoint,
    flux_jacobian,
    flux_power_bounds,
    flux_value,
    hessian_quadratic_form,
    log_power_bound,
    monotonicity_gap,
)
from .problem import (
    CoefficientField,
    ExponentField,
    ProblemSpec,
    RInterval,
    ValidationReport,
    admissible_r_interval,
    build_spec,
    mollify_coefficients,
    read_config,
    spec_from_config,
    validate,
)
from .solver import (
    ContinuationTrace,
    EvolutionResult,
    NewtonConfig,
    TimeStepState,
    epsilon_continuation,
    newton_step,
    residual,
    solve_evolution,
)
from .varexp import ConvergenceMetrics, convergence_metrics, luxemburg_norm, modular
from .harness import (
    MMSCase,
    RegularityReport,
    interpolation_diagnostic,
    mms_convergence,
    mollification_stability,
    preservation_check,
    regularity_report,
)

__version__ = "0.1.0"
