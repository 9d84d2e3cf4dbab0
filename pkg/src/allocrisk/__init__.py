"""Bayes-optimal allocation of experimental units to treatment and control.

The package prices every candidate allocation by the expected posterior
variance of the treatment-effect contrast under a conjugate Normal
linear model, and searches for the minimizer: single-shot via `optimize`,
batch-by-batch via sequential sessions.  The flat-prior special case
reduces to classical covariate balance (Mahalanobis distance), and
`balance` houses the equal-split sufficiency test.

The CLI (`allocrisk`) and the HTTP service (`allocrisk-service`) are thin
shells over these same functions.
"""

__version__ = "0.1.0"

from .errors import AllocRiskError
from .model import (
    Allocation,
    CovariateMatrix,
    FlatPrior,
    NigPrior,
    Posterior,
    Prior,
    PriorDecomposition,
    build_design,
    decompose_prior,
    posterior_update,
)
from .risk import (
    RiskBreakdown,
    RiskModel,
    mahalanobis,
    risk_direct,
    risk_flat,
    risk_general,
    risk_pseudo_sample,
)
from .allocator import (
    OptimizationResult,
    OptimizerConfig,
    enumerate_allocations,
    optimize,
    optimize_equal_split,
)
from .sequential import (
    BatchRecord,
    BatchRequest,
    SequentialSession,
    allocate_batch,
    conditional_risk,
    open_session,
    record_outcomes,
)
from .balance import (
    EqualSplitReport,
    counterexample_table,
    equal_split_condition,
    hat_quadratic_form,
)
from .dataio import load_covariates, load_prior, parse_prior

__all__ = [
    "__version__",
    "AllocRiskError",
    "Allocation",
    "CovariateMatrix",
    "FlatPrior",
    "NigPrior",
    "Posterior",
    "Prior",
    "PriorDecomposition",
    "build_design",
    "decompose_prior",
    "posterior_update",
    "RiskBreakdown",
    "RiskModel",
    "mahalanobis",
    "risk_direct",
    "risk_flat",
    "risk_general",
    "risk_pseudo_sample",
    "OptimizationResult",
    "OptimizerConfig",
    "enumerate_allocations",
    "optimize",
    "optimize_equal_split",
    "BatchRecord",
    "BatchRequest",
    "SequentialSession",
    "allocate_batch",
    "conditional_risk",
    "open_session",
    "record_outcomes",
    "EqualSplitReport",
    "counterexample_table",
    "equal_split_condition",
    "hat_quadratic_form",
    "load_covariates",
    "load_prior",
    "parse_prior",
]
