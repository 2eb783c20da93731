"""No-recurrence sequence-to-sequence scene-text recognition on a numpy autodiff core."""

from .kernels import BACKEND as KERNEL_BACKEND
from .model import ModelConfig, NRTR

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "ModelConfig", "NRTR", "__version__"]
