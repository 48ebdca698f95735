"""Vector autoregression with a common response/predictor subspace.

The coefficient matrix of a VAR(1) is factored as ``A = [C R] D [C P]'`` where
``C`` spans the directions shared by the response and predictor factor spaces.
The VAR(lag) analogue is a Tucker decomposition of the coefficient tensor.
"""

from .estimator import (
    FitReport,
    GdConfig,
    Problem,
    SparsityLevels,
    fit_sparse_var1,
    fit_var1,
    fit_varl,
    lagged_design,
    lasso_var1,
)
from .exceptions import (
    ConvergenceError,
    DivergenceError,
    RankError,
    ShapeError,
    SpecError,
    StationarityError,
    VarcsError,
)
from .forecaster import RollingSpec, forecast, rolling_evaluate
from .initializer import (
    rank_constrained_varl,
    reduced_rank_var1,
    sparse_init_var1,
    spectral_init_var1,
    spectral_init_varl,
)
from .model import Var1CsParams, VarLCsParams, diagnostics
from .selector import SelectionConfig, SelectionReport, select_pipeline
from .simulator import DgpSpec, ExperimentSpec, McSummary, dfm_var_baseline, run_experiment, simulate

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DgpSpec", "DivergenceError", "ExperimentSpec", "FitReport", "GdConfig",
    "McSummary", "Problem", "RankError", "RollingSpec", "SelectionConfig", "SelectionReport",
    "ShapeError", "SparsityLevels", "SpecError", "StationarityError", "Var1CsParams", "VarLCsParams",
    "VarcsError", "dfm_var_baseline", "diagnostics", "fit_sparse_var1", "fit_var1", "fit_varl",
    "forecast", "lagged_design", "lasso_var1", "rank_constrained_varl", "reduced_rank_var1",
    "rolling_evaluate", "run_experiment", "select_pipeline", "simulate", "sparse_init_var1",
    "spectral_init_var1", "spectral_init_varl",
]
