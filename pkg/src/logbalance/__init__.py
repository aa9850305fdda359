"""Numerical laboratory for (beta, C)-balanced entire functions on the half line."""

__version__ = "0.1.0"

from .numerics import LogReal, integrate_logspace, log_sum_exp
from .solver import BalancedModel, load_model, save_model, solve
from .asymptotics import anchor, compare_models, concentration, gap_report, omega_estimate
from .theory import curve, d_ratio, extremize_d
from .poisson import sum_vs_integral, zeta

__all__ = [
    "BalancedModel",
    "LogReal",
    "anchor",
    "compare_models",
    "concentration",
    "curve",
    "d_ratio",
    "extremize_d",
    "gap_report",
    "integrate_logspace",
    "load_model",
    "log_sum_exp",
    "omega_estimate",
    "save_model",
    "solve",
    "sum_vs_integral",
    "zeta",
]
