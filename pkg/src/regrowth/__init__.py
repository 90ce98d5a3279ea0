"""Consistent random trees grown by recursive insertion rules."""

from .kernels import HAVE_KERNELS
from .models import (
    AlphaGamma,
    AlphaTheta,
    AssumptionError,
    Ford,
    FromKappa,
    GrowthModel,
    PoissonDirichlet,
    grow,
    grow_sequence,
    grow_step,
    model_from_json,
)
from .partitions import PartitionN
from .trees import LabelledTree

__version__ = "0.1.0"

__all__ = [
    "HAVE_KERNELS",
    "AlphaGamma",
    "AlphaTheta",
    "AssumptionError",
    "Ford",
    "FromKappa",
    "GrowthModel",
    "PoissonDirichlet",
    "grow",
    "grow_sequence",
    "grow_step",
    "model_from_json",
    "PartitionN",
    "LabelledTree",
]
