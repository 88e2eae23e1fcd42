"""Bayesian network vector autoregression for directed dyadic panels."""

from .design import DesignMatrix, DesignSplit, RegressionData, build_design, build_row, make_split, regression_data, split_design
from .dyad import CovariateTensor, DyadicPanel, WeightScheme, equal_weights, unvecd, validate_weights, vecd
from .nvard import (
    NvardPosterior,
    RankDeficiencyError,
    SuffStats,
    accumulate,
    credible_intervals,
    fit_from_data,
    fit_nvard,
    log_joint_posterior,
    point_estimates,
    predict_nvard,
)
from .vcnvard import GibbsConfig, GibbsState, VcnvardData, VcnvardFit, init_state, predict_vcnvard, run_gibbs

__version__ = "0.1.0"
