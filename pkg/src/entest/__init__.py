"""Ensemble tests of a global null: randomized base tests combined by the Cauchy combination."""

from .acat import combine, transform_p
from .base_tests import BaseResult, burden, morst, skat, subset_chisq
from .dist import (
    MixtureSpec,
    MixtureTail,
    cauchy_sf,
    chisq_sf,
    mixture_sf,
    normal_sf,
    two_sided_normal_p,
)
from .ensemble import (
    EnsembleConfig,
    TestResult,
    en_burden,
    en_morst,
    en_skat,
    en_subset_chisq,
    run_adaptive,
)
from .errors import ConfigError, DataError, DomainError, EntestError, NumericalError
from .sampling import SeedSpec, WeightLaw, sample_positive_direction, sample_subset, stream_for
from .score_model import (
    EigenSystem,
    ScoreModel,
    SignalSpec,
    eigen,
    exchangeable_sigma,
    from_regression,
    linear_stat,
    relative_efficiency,
)

__version__ = "0.1.0"
