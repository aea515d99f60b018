"""Recovery of a representative agent from a one-dimensional diffusion market.

The scikit-learn wrapper lives in :mod:`eigenrecovery.estimator` and is not
imported here.
"""

from .boundary import BoundaryReport, Classification, classify, classify_model
from .catalog import CATALOG, ClosedFormModel, black_scholes, by_name, exp_cir, log_dividend
from .config import Config, ConfigError, load_config, parse_config
from .exprdsl import ParseError, evaluate, parse
from .integrals import DepthSchedule
from .martcrit import MartingaleStatus, MartingaleVerdict, lambda_zero, martingale_check
from .model import MarketModel, ModelError, apply_monotone_map, derive, to_log_coordinates
from .odesolve import (
    CandidateSlice,
    EigenSolution,
    HypothesisViolation,
    OdeSolveError,
    critical_lambda,
    residual,
    slope_bounds,
    solve,
)
from .recover import AdmissibleSet, NotAdmissibleError, RecoveredAgent, admissible_set, composite_index_model, recover_agent
from .simulate import SimulationResult, exceedance_trend, martingale_mc_check, simulate
from .usualset import UsualStatus, UsualVerdict, lambda_one, usual_check

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
