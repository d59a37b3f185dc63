"""Coarse-grained model fitting with uncertainty quantification.

Force matching, relative entropy and relative-entropy-rate estimators for
parametric CG models, with sandwich, jackknife and bootstrap confidence
intervals, a two-scale diffusion test-bed and pairwise force matching for
particle systems.
"""

from .core import (
    BasisSet,
    CgMap,
    ConfidenceReport,
    IidDataset,
    ParamEstimate,
    TimeSeriesDataset,
    design_matrix,
    design_matrix_deriv,
    eval_basis,
    eval_basis_deriv,
    eval_model,
)
from .estimators import (
    GibbsModel,
    LinearSystem,
    NewtonOptions,
    fit_fm_iid,
    fit_fm_ts,
    fit_re_iid,
    fit_rer,
    solve_normal_equations,
)
from .exceptions import CguqError
from .twoscale import TwoScaleParams, generate_paths, sample_iid

__version__ = "0.1.0"

__all__ = [
    "BasisSet",
    "CgMap",
    "CguqError",
    "ConfidenceReport",
    "GibbsModel",
    "IidDataset",
    "LinearSystem",
    "NewtonOptions",
    "ParamEstimate",
    "TimeSeriesDataset",
    "TwoScaleParams",
    "design_matrix",
    "design_matrix_deriv",
    "eval_basis",
    "eval_basis_deriv",
    "eval_model",
    "fit_fm_iid",
    "fit_fm_ts",
    "fit_re_iid",
    "fit_rer",
    "generate_paths",
    "sample_iid",
    "solve_normal_equations",
    "__version__",
]
