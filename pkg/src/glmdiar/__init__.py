"""Large-margin softmax speaker embeddings and spectral-clustering diarisation."""

from ._accel import backend_name
from .margin_loss import MODIFIED_SOFTMAX, MarginParams, MarginSchedule, psi, validate_params
from .numerics import ContractError

__version__ = "0.1.0"

__all__ = [
    "MODIFIED_SOFTMAX",
    "ContractError",
    "MarginParams",
    "MarginSchedule",
    "backend_name",
    "psi",
    "validate_params",
]
