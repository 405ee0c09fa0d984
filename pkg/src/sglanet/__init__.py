"""Global-local attention image classifier on a small numpy autograd core."""

from .errors import (BackwardTwiceError, CheckpointError, ConfigError, DataError, LabelError, NoBackwardError,
                     PrecisionError, SGLAError, ShapeError)
from .network import LossWeights, SGLANet, total_loss
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BackwardTwiceError", "CheckpointError", "ConfigError", "DataError", "LabelError", "LossWeights",
    "NoBackwardError", "Parameter", "PrecisionError", "SGLAError", "SGLANet", "ShapeError", "Tensor",
    "no_grad", "total_loss",
]
