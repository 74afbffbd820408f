"""Non-Markovian stochastic Schroedinger equations with Ornstein-Uhlenbeck noise.

Trajectory simulation of linear and nonlinear SSEs with random adapted
coefficients, ensemble estimates of the a-priori state, and deterministic
solvers for the associated memory master equation.
"""

__version__ = "0.1.0"

from .coefficients import (
    CoefficientProcess,
    DriftConditionViolated,
    NotSkewAdjoint,
    OUModel,
    drift_K,
    m_coefficients,
    markovian_model,
    ou_random_hamiltonian_model,
    validate_norm_preserving,
)
from .config import ConfigError, RunConfig, parse_config
from .ensemble import (
    EnsembleStats,
    RecordSpec,
    girsanov_check,
    martingale_report,
    mean_eq_residual,
    physical_expectation,
    run_ensemble,
    run_physical_ensemble,
)
from .experiments import RunManifest, run_experiment
from .integrators import (
    build_propagator,
    girsanov_shift,
    lsme_step,
    lsse_step,
    nlsme_step,
    nlsse_step,
    simulate_lsme,
    simulate_lsse,
    simulate_nlsme,
    simulate_nlsse,
    weight_direct,
    weight_exponential,
)
from .memory import (
    dephasing_oracle,
    kernel_K1,
    lindblad_evolve,
    mean_liouvillian,
    memory_me_evolve,
)
from .noise import (
    NoisePath,
    TimeGrid,
    derive_stream,
    noise_path,
    ou_autocorrelation,
    ou_path,
    wiener_increments,
)
from .operators import (
    check_density,
    commutator,
    dissipator,
    superop_exp,
    superop_from_form,
)

