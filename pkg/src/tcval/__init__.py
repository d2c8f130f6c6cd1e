"""Time-consistent valuation of payoffs on diffusion models.

Three engines price the same claim: backward iteration of one-step premium
principles on binomial/quadrinomial trees (``lattice``), a semilinear PDE
solver (``pde``) and Feynman-Kac closed forms (``closedform``). ``harness``
compares them.
"""

from .closedform import (
    closed_form_price,
    coc_price,
    exp_indifference_price,
    mean_value_price,
    power_price,
    stddev_price,
)
from .errors import (
    CalibrationError,
    ConfigurationError,
    ContractError,
    DomainError,
    IntegrabilityError,
    SliceLookupError,
    TcvalError,
    UnsupportedRepresentationError,
)
from .harness import (
    Case,
    ConvergenceReport,
    DavisReport,
    Reference,
    coc_equals_stddev_limit,
    converge_lattice_to_limit,
    davis_is_marginal_price,
    fit_order,
    reports_to_csv,
)
from .lattice import (
    QuadrinomialCalibration,
    TreeKind,
    backward_induct,
    binomial_children,
    calibrate_quadrinomial,
    quadrinomial_children,
)
from .model import (
    DiffusionModel,
    Grid,
    ModelKind,
    Monotonicity,
    Payoff,
    PayoffKind,
    PriceSurface,
    build_grid,
    evaluate_payoff,
    make_model,
    make_payoff,
)
from .pde import (
    Generator,
    GeneratorKind,
    SolverConfig,
    extract_slice,
    generator_for,
    linear_generator,
    solve_davis,
    solve_principle,
    solve_semilinear,
    state_gradient,
)
from .principles import (
    DiscreteDistribution,
    Distortion,
    PrincipleKind,
    PrincipleSpec,
    coc_step,
    current_price_benchmark_step,
    exponential_distortion,
    linear_distortion,
    mean_value_step,
    power_distortion,
    stddev_step,
    var_quantile,
    variance_discounted_step,
    variance_step,
)

__version__ = "0.1.0"
