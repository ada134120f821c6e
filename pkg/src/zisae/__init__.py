"""Small area estimation for zero-inflated continuous survey responses."""

__version__ = "0.1.0"

from .bootstrap import BootPopulation, BootstrapMse, bootstrap_mse, draw_boot_sample, generate_boot_population
from .data import (AreaMeans, PopulationFrame, SampleFrame, UnitRecord, area_means, build_population,
                   build_sample, restrict_positive)
from .errors import (ConfigError, ConvergenceError, InsufficientDataError, NoPositiveResponsesError,
                     NumericalError, SaeError, SchemaError, SeparationError, SingularDesignError)
from .estimators import (AreaEstimate, area_eblup, fh_mse_terms, h_term, horvitz_thompson,
                         post_stratified, unit_eblup, unit_mse_terms)
from .mixed import (FhFit, GlmmFit, LmmFit, fit_fh_reml, fit_glmm_logit, fit_lmm_reml,
                    glmm_predict_prob, reml_objective)
from .simulation import (SimConfig, SimulationReport, ci_coverage, draw_sim_sample, empirical_rmse,
                         prb, prb_rmse, relative_efficiency, run_simulation, true_means)
from .zi import ZiFit, zi_estimate, zi_fit, zi_predict_unit

__all__ = [
    "AreaEstimate", "AreaMeans", "BootPopulation", "BootstrapMse", "ConfigError",
    "ConvergenceError", "FhFit", "GlmmFit", "InsufficientDataError", "LmmFit",
    "NoPositiveResponsesError", "NumericalError", "PopulationFrame", "SaeError", "SampleFrame",
    "SchemaError", "SeparationError", "SimConfig", "SimulationReport", "SingularDesignError",
    "UnitRecord", "ZiFit", "area_eblup", "area_means", "bootstrap_mse", "build_population",
    "build_sample", "ci_coverage", "draw_boot_sample", "draw_sim_sample", "empirical_rmse",
    "fh_mse_terms", "fit_fh_reml", "fit_glmm_logit", "fit_lmm_reml", "generate_boot_population",
    "glmm_predict_prob", "h_term", "horvitz_thompson", "post_stratified", "prb", "prb_rmse",
    "relative_efficiency", "reml_objective", "restrict_positive", "run_simulation", "true_means",
    "unit_eblup", "unit_mse_terms", "zi_estimate", "zi_fit", "zi_predict_unit",
]
