"""Small area estimation with GAMLSS distributional regression."""
from .errors import (
    ConfigError, ConvergenceError, DegenerateError, DomainError, MomentUndefined,
    NestingError, RankError, SpecError, SupportError,
)
from .distributions import (
    Dagum, Gamma, Identity, Log, LogNormal, Normal, ParamVector,
    cdf, get_family, get_link, log_pdf, mean_of, quantile, sample, score,
    select_distribution,
)

__version__ = "0.1.0"

from .model import Dataset, ModelSpec, ParamSpec, build_design, validate_spec  # noqa: E402
from .fit import (  # noqa: E402
    FitControl, FittedModel, coefficient_table, estimate_re_variance, fit_gamlss,
    fit_quadrature_em, gaic, gauss_hermite_grid, global_deviance, lr_test, quantile_residuals,
)
from .predict import (  # noqa: E402
    AreaFunctional, FixedLine, FractionOfMedian, PredictionResult, predict_area,
    predict_area_mc, predict_area_mean_closed, predict_area_mean_exact,
)
from .eblup import BhfFit, Transform, fit_bhf, predict_eblup  # noqa: E402
from .mse import MseResult, bootstrap_mse, bootstrap_mse_eblup  # noqa: E402
from .simulate import (  # noqa: E402
    DbConfig, ScenarioConfig, SimulationReport, compute_metrics, run_db_protocol, run_scenario,
)
from .artifact import load_model, save_model  # noqa: E402
from .config import load_config, parse_formula  # noqa: E402
