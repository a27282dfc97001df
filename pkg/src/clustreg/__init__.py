"""Gaussian mixtures, shared-slope clusterwise regressions and BIC-driven
search for multiple cluster structures in one set of variables."""

from ._em import BlockFit, EMControl
from .covariance import CovForm, CovParam
from .cwreg import CwRegParams, count_params_cwreg, fit_cwreg
from .data import (
    Dataset,
    GeneratorSpec,
    VariablePartition,
    generate,
    load_csv,
    monte_carlo_design,
    save_csv,
)
from .errors import (
    BlockFitError,
    BudgetExceededError,
    ClustregError,
    DataError,
    DegenerateFitError,
    NumericalError,
    RankDeficientError,
    ValidationError,
)
from .gmm import GmmParams, count_params_gmm, fit_gmm
from .identifiability import Factorization, Verdict, check_identifiability, compose_product
from .joint import FitCache, JointFit, ModelSpec, bic, fit_joint, rescore
from .linreg import LinRegParams, count_params_linreg, fit_linreg
from .metrics import ContingencyTable, ari, ari_from_table, crosstab
from .search import Chromosome, GAControl, SearchResult, decode, regressor_refine, search

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
