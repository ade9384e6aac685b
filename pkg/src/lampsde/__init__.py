"""Domain-preserving strong approximation of scalar SDEs.

Models with square-root/power-law/interval diffusions are mapped by the
Lamperti transform to unit-noise SDEs whose backward-Euler steps stay inside
the open domain by construction; a drift-implicit Milstein variant covers
CIR in original coordinates. The errorlab module measures strong convergence
orders against fine-grid self-references, and the cli module wraps the lot
behind config files.
"""

from .brownian import (
    BrownianPath,
    GridSpec,
    coarsen,
    coarsen_increments,
    dump_increments,
    load_increments,
    sample_increments_block,
    sample_path,
)
from .config import ExperimentConfig, load_config, parse_config, serialize_config
from .errorlab import (
    ConvergenceReport,
    ErrorEstimate,
    Metric,
    MilsteinComparison,
    MomentEstimate,
    compare_milstein_lbe,
    convergence_study,
    estimate_strong_error,
    fit_convergence,
    moment_finite_range,
    moment_monitor,
)
from .errors import (
    ConfigError,
    DomainError,
    InadmissibleStepError,
    InvalidParamsError,
    LampSdeError,
    NoConvergenceError,
)
from .models import (
    AitSahaliaParams,
    CEVParams,
    CIRParams,
    ConditionCheck,
    Heston32Params,
    ModelId,
    ModelSpec,
    ValidityReport,
    WrightFisherParams,
    diffusion,
    drift,
    make_spec,
    max_strong_order_p,
    validate_params,
)
from .schemes import (
    SchemeId,
    SchemeRun,
    interpolate_linear,
    run_bem,
    run_explicit_em,
    run_lbe,
    run_milstein_cir,
    write_trajectory_csv,
)
from .stepping import (
    DEFAULT_CONFIG,
    StepSolverConfig,
    admissible_step,
    cir_step_closed_form,
    milstein_cir_step,
    solve_implicit,
)
from .transform import TransformedModel, back_transform_path, transform

__version__ = "0.1.0"
