"""splitma: pseudo-spectral solver and verification lab for a parabolic
split-type Monge-Ampere flow on product complex tori."""

from .errors import (
    AdmissibilityLost,
    BelowBetaThreshold,
    ConfigurationError,
    FieldFormatError,
    NumericalFailure,
    PoissonDataError,
    SplitmaError,
)
from .grid_field import (
    ComplexField,
    RealField,
    TorusGrid,
    derivative,
    make_grid,
    poisson_solve_factor,
    read_field,
    stats,
    sup_norm,
    write_field,
)
from .geometry import (
    BETA_MIN,
    Background,
    ConstantsReport,
    constants,
    curvature,
    flat_background,
    kahler_product_background,
    pluriclosed_background,
    torsion,
    verify_pluriclosed,
)
from .flow import (
    FlowParams,
    FlowState,
    Trajectory,
    gauge_out_f,
    lambda_eta,
    normalize_exponents,
    run,
    shift_min_zero,
    step_rk4,
)
from .identities import (
    material_derivative,
    random_test_field,
    verify_A,
    verify_B,
    verify_C,
)
from .monitors import corrupt_trajectory, evaluate, legendre_w, mixed_norm

__all__ = [
    "AdmissibilityLost",
    "BETA_MIN",
    "Background",
    "BelowBetaThreshold",
    "ComplexField",
    "ConfigurationError",
    "ConstantsReport",
    "FieldFormatError",
    "FlowParams",
    "FlowState",
    "NumericalFailure",
    "PoissonDataError",
    "RealField",
    "SplitmaError",
    "TorusGrid",
    "Trajectory",
    "constants",
    "corrupt_trajectory",
    "curvature",
    "derivative",
    "evaluate",
    "flat_background",
    "gauge_out_f",
    "kahler_product_background",
    "lambda_eta",
    "legendre_w",
    "make_grid",
    "material_derivative",
    "mixed_norm",
    "normalize_exponents",
    "pluriclosed_background",
    "poisson_solve_factor",
    "random_test_field",
    "read_field",
    "run",
    "shift_min_zero",
    "stats",
    "step_rk4",
    "sup_norm",
    "torsion",
    "verify_A",
    "verify_B",
    "verify_C",
    "verify_pluriclosed",
    "write_field",
]

__version__ = "0.1.0"
