"""photodyne: trajectories and closed-form statistics for simultaneous
photon counting and homodyne monitoring of a single lossy cavity mode."""

from .analytics import (
    GFQuery,
    KappaNu,
    coherent_homodyne_moments,
    conditioned_quadrature,
    count_moments,
    generating_function,
    joint_density_pm,
    kappa_nu,
    laguerre,
    log_derivative_quadrature,
)
from .engine import (
    MeasurementRecord,
    Trajectory,
    jump_update_moments,
    nocount_drift_check,
    run_trajectory,
    step,
    trajectory_rng,
)
from .ensemble import (
    EnsembleStats,
    RunConfig,
    compare_oracle,
    run_ensemble,
)
from .exceptions import (
    ConfigError,
    ConsistencyError,
    DimensionError,
    DivergenceError,
    DomainError,
    PhotodyneError,
    StepSizeError,
    TruncationError,
    UndefinedConditionalError,
)
from .fock import (
    Coherent,
    InitialState,
    Number,
    Squeezed,
    StateVector,
    Thermal,
    ThermalWeights,
    annihilation,
    creation,
    default_dim,
    expect,
    make_state,
    mean_occupation,
    number_op,
)
from .params import SimParams
from .propagators import (
    CountRecord,
    RecordAccumulators,
    accumulate,
    accumulators_at,
    closed_form_b,
    initial_accumulators,
    m_count_state,
    no_count_propagate,
)
from .squeezed import (
    GaussianQState,
    ReorderedExponential,
    antinormal_reorder,
    q_expectation,
    q_function,
    squeeze_factorization,
    squeezed_normal_expectation,
)

__version__ = "0.1.0"
