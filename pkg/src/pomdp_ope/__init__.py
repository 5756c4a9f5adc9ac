"""Off-policy evaluation for confounded POMDPs with bridge functions."""

from .core import (
    BanditDataset,
    Continuous1DProcess,
    NumericalError,
    SigmoidPolicy,
    TabularPOMDP,
    TabularPolicy,
    TupleDataset,
    ValidationError,
    ValueEstimate,
)

__all__ = [
    "BanditDataset",
    "Continuous1DProcess",
    "NumericalError",
    "SigmoidPolicy",
    "TabularPOMDP",
    "TabularPolicy",
    "TupleDataset",
    "ValidationError",
    "ValueEstimate",
]
