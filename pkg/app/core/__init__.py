from .config import settings
from .errors import ArtifactIOError, ConfigurationError, InvalidParameterError, MissingInputsError, NumericalError, UMSError

__all__ = [
    "settings",
    "UMSError",
    "ConfigurationError",
    "InvalidParameterError",
    "NumericalError",
    "ArtifactIOError",
    "MissingInputsError",
]
