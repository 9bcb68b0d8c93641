"""Generalized normal tempered stable processes, conditional RealNVP density
learning, market fitting, risk-neutral calibration, and quanto option pricing."""

from .crealnvp import ConditionVector, FlowModel, load_model, save_model
from .errors import (
    ConfigError,
    DataError,
    GntsError,
    NumericError,
    ParameterError,
    SamplerError,
)
from .estimation import (
    FitResult,
    MarketSeries,
    ReturnPanel,
    compute_returns,
    fit_result_from_json,
    fit_result_to_json,
    ks2d_test,
    ks2d_two_sample,
    load_market_csv,
    mle_fit,
    sample_moments,
)
from .gnts import (
    GNTSParams,
    GStdNTSParams,
    HorizonParams,
    beta_bound,
    gnts_cf_component,
    gnts_moments,
    gnts_to_stdgnts,
    horizon_rescale,
    params_from_json,
    params_to_json,
    sample_gnts,
    sample_horizon,
    sample_stdgnts,
    std_mu_sigma,
    stdgnts_to_gnts,
)
from .riskneutral import (
    MarketRates,
    PricingRequest,
    RNCalibration,
    calibrate_rn,
    daily_to_process_params,
    martingale_residual,
    price_quanto_call_mc,
    price_quanto_call_quadrature,
    pricing_grid_rows,
    rn_beta_of_theta,
    rn_horizon_params,
)
from .subts import SubTSParams, sample_subts, subts_cf, subts_moments
from .training import (
    TrainingConfig,
    TrainingSet,
    build_training_set,
    load_training_set,
    sample_training_condition,
    save_training_set,
    train_flow,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionVector", "FlowModel", "load_model", "save_model",
    "GntsError", "ParameterError", "SamplerError", "NumericError", "DataError", "ConfigError",
    "MarketSeries", "ReturnPanel", "FitResult",
    "load_market_csv", "compute_returns", "sample_moments", "mle_fit",
    "ks2d_test", "ks2d_two_sample", "fit_result_to_json", "fit_result_from_json",
    "GNTSParams", "GStdNTSParams", "HorizonParams",
    "beta_bound", "std_mu_sigma", "gnts_cf_component", "gnts_moments",
    "sample_gnts", "sample_stdgnts", "sample_horizon",
    "stdgnts_to_gnts", "gnts_to_stdgnts", "horizon_rescale",
    "params_to_json", "params_from_json",
    "MarketRates", "RNCalibration", "PricingRequest",
    "daily_to_process_params", "rn_beta_of_theta", "calibrate_rn", "rn_horizon_params",
    "martingale_residual", "price_quanto_call_quadrature", "price_quanto_call_mc",
    "pricing_grid_rows",
    "SubTSParams", "subts_cf", "subts_moments", "sample_subts",
    "TrainingConfig", "TrainingSet", "build_training_set",
    "save_training_set", "load_training_set", "train_flow",
    "sample_training_condition",
    "__version__",
]
