"""Worst-case group-fairness auditing over Wasserstein balls."""
from .data import (
    Dataset,
    FairnessSpec,
    GroupStats,
    demographic_parity,
    empirical_fairness,
    encode_u,
    equal_opportunity,
    equalized_odds,
    fairness_score,
    make_spec,
    phi,
)
from .kernels import BACKEND

__all__ = [
    "BACKEND",
    "Dataset",
    "FairnessSpec",
    "GroupStats",
    "demographic_parity",
    "empirical_fairness",
    "encode_u",
    "equal_opportunity",
    "equalized_odds",
    "fairness_score",
    "make_spec",
    "phi",
]
__version__ = "0.1.0"
