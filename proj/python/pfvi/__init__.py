"""Partially factorized variational inference for crossed mixed models."""

from ._core import (
    Fit,
    Model,
    PfviError,
    duality_check,
    rg_bound,
    tv_accuracy,
    uqf_analytic,
    uqf_split_sample,
)

__all__ = [
    "Fit",
    "Model",
    "PfviError",
    "duality_check",
    "rg_bound",
    "tv_accuracy",
    "uqf_analytic",
    "uqf_split_sample",
]
__version__ = "0.1.0"
