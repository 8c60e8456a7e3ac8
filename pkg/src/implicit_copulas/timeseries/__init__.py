"""Serial-dependence copula processes: AR, VAR and UCSV."""

from .ar import (ArCopula, ArCopulaParams, ArFit, ar_autocovariances, ar_conditional_logdensity,
                 ar_copula_correlation, ar_copula_loglik, ar_fit, simulate_ar_z, spearman_lag)
from .predictive import ts_predictive_density, ucsv_filter_predictive
from .ucsv import (StatePaths, UcsvCopula, UcsvMarginal, UcsvParams, UcsvSamplerConfig,
                   state_summary, ucsv_bivariate_density_grid, ucsv_margin, ucsv_mcmc_fit,
                   ucsv_simulate_z, ucsv_validate)
from .var import (VarCopula, VarCopulaParams, simulate_var_z, var_block_correlations, var_fit,
                  var_predict_draw)

__all__ = [
    "ArCopula", "ArCopulaParams", "ArFit", "ar_autocovariances", "ar_conditional_logdensity",
    "ar_copula_correlation", "ar_copula_loglik", "ar_fit", "simulate_ar_z", "spearman_lag",
    "ts_predictive_density", "ucsv_filter_predictive", "StatePaths", "UcsvCopula",
    "UcsvMarginal", "UcsvParams", "UcsvSamplerConfig", "state_summary",
    "ucsv_bivariate_density_grid", "ucsv_margin", "ucsv_mcmc_fit", "ucsv_simulate_z",
    "ucsv_validate", "VarCopula", "VarCopulaParams", "simulate_var_z", "var_block_correlations",
    "var_fit", "var_predict_draw",
]
