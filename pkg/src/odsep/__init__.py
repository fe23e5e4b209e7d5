"""Over-determined unsupervised multichannel source separation toolkit."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DegenerateInputError, GeometryError,
                     NumericalError, OdsepError)
from .fcp import FcpConfig, RelativeFilterBank
from .stft import StftConfig, istft, stft

__all__ = [
    "__version__",
    "ConfigurationError",
    "DegenerateInputError",
    "GeometryError",
    "NumericalError",
    "OdsepError",
    "FcpConfig",
    "RelativeFilterBank",
    "StftConfig",
    "istft",
    "stft",
]
