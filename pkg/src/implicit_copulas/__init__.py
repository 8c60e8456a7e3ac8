"""Implicit copula models: elliptical, skew-t, factor, time-series and regression."""

from .copula_core import (CopulaModel, CorrelationMatrix, DiscreteCdf, GaussianCopula, TCopula,
                          TCopulaParams, discrete_bounds, discrete_mass_by_differencing,
                          gaussian_copula_cdf, gaussian_copula_logdensity, model_from_dict,
                          simulate_copula_model, t_copula_logdensity)
from .errors import (CapacityError, ContractError, CopulaError, DomainError, FitError,
                     MatrixError, NumericError, RunError)
from .factor import FactorCopula, FactorParams, factor_fit_em, factor_to_correlation
from .margins import (AsymLaplaceMargin, InterpTable, KdeMargin, Margin, NormalMargin,
                      SkewTMargin, StudentTMargin, TableMargin, UniformMargin,
                      build_interp_table, fit_margin, margin_cdf, margin_from_dict,
                      margin_logpdf, margin_quantile)
from .mcmc import Chain, chain_summary
from .regression import (RegressionCopula, RegressionData, reg_conditional_loglik,
                         reg_correlation, reg_mcmc_fit, reg_predict_density, reg_scale)
from .skewt import (SkewTCopula, SkewTCopulaParams, SkewTPrior, skewt_logpdf,
                    skewt_mcmc_fit)
from .timeseries import (ArCopula, UcsvCopula, UcsvParams, VarCopula, VarCopulaParams,
                         ar_fit, ts_predictive_density, ucsv_mcmc_fit, var_fit)

__version__ = "0.1.0"
