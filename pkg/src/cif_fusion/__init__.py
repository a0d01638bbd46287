"""Competing-risks estimation fusing a randomized trial with external controls."""

from .cohort import Cohort, EventRecord, nelson_aalen
from .errors import (
    CifFusionError,
    ConvergenceWarning,
    DataError,
    DegenerateDesignError,
    DegenerateDesignWarning,
    DegenerateLabelsError,
    EmptyRiskSetError,
    NoEventsError,
    NumericalError,
    PositivityError,
    SeparationError,
    TiedEventTimesError,
)
from .cox import CoxFit, fit_cox, predict_cum_hazard
from .estimators import (
    EstimateReport,
    InfluenceVector,
    ReductionReport,
    Target,
    estimate,
    estimate_all,
    influence_gamma,
    influence_theta,
    variance_reduction,
)
from .hazards import (
    CumulativeHazard,
    aalen_johansen,
    duhamel_residual,
    hazard_sum,
    product_integral,
    product_integral_left,
    stieltjes_integral,
)
from .cli import RunConfig, ingest, load_run_config, write_dataset
from .logistic import LogisticFit, fit_logistic
from .nuisance import NuisanceSet, derived_quantities, fit_nuisances, weight_cap_value
from .oracles import (
    NUISANCE_SLOTS,
    OracleReport,
    check_aj_equivalence,
    check_eif_mean_zero,
    check_identities,
    check_reduction_consistency,
    true_nuisance_set,
)
from .simulation import (
    DgpConfig,
    HazardCoef,
    SimulationSummary,
    SummaryRow,
    default_config,
    generate_cohort,
    run_study,
    true_values,
)

__version__ = "0.1.0"
