"""Bayesian discrete-time competing-risks regression with Polya-Gamma Gibbs
sampling and Bayesian model averaging over covariate subsets."""

__version__ = "0.1.0"

from .cohort import (  # noqa: E402
    CohortError,
    CohortMeta,
    PersonPeriodFrame,
    SubjectRecord,
    detect_separation,
    expand_person_period,
    load_cohort,
    load_schema,
)
from .gibbs import ChainState, GibbsSampler, PosteriorDraws, SamplerConfig, run_chain  # noqa: E402
from .model import (  # noqa: E402
    ParamBlock,
    cohort_loglik,
    hazard,
    simulate_cohort,
    subject_loglik,
)
from .model_space import (  # noqa: E402
    EvidenceConfig,
    enumerate_models,
    log_marginal_likelihood,
    run_bma,
)
from .np_hazard import cumulative_incidence, np_sub_hazard, total_hazard  # noqa: E402
from .polyagamma import sample_pg, sample_pg1  # noqa: E402
from .priors import PriorConfig  # noqa: E402

__all__ = [
    "ChainState",
    "CohortError",
    "CohortMeta",
    "EvidenceConfig",
    "GibbsSampler",
    "ParamBlock",
    "PersonPeriodFrame",
    "PosteriorDraws",
    "PriorConfig",
    "SamplerConfig",
    "SubjectRecord",
    "cohort_loglik",
    "cumulative_incidence",
    "detect_separation",
    "enumerate_models",
    "expand_person_period",
    "hazard",
    "load_cohort",
    "load_schema",
    "log_marginal_likelihood",
    "np_sub_hazard",
    "run_bma",
    "run_chain",
    "sample_pg",
    "sample_pg1",
    "simulate_cohort",
    "subject_loglik",
    "total_hazard",
]
