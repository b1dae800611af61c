"""Shift measures and calibrated prediction intervals for generalizing effect
estimates from a fully observed source site to a covariates-only target site."""
from .data_model import PairTask, SiteDataset, load_site_dataset, load_sites, split_folds
from .errors import ConfigError, DataError, ShiftPIError
from .estimators import conditional_variances, dr_estimate, eb_estimate
from .harness import RunConfig, evaluate_direct, evaluate_scenario
from .influence import InfluenceSpec
from .intervals import (PredictionInterval, calibrate_bounds, covshift_interval, iid_interval,
                        predictive_interval)
from .randshift_sim import (CorpusConfig, LinearGaussianLaw, RandomShiftConfig, TwoPoint,
                            UniformInterval, run_clt_experiment, simulate_corpus)
from .shift_measures import ShiftMeasures, compute_shift_measures, stabilized_covariate_shift
from .worstcase_kl import estimate_conditional_kl, kl_worstcase_interval

__version__ = "0.1.0"
