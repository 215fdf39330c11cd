"""Style-translation bootstrapping for zero-shot RL generalization."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, IntegrityError, StateError

__all__ = ["ConfigError", "DataError", "IntegrityError", "StateError", "__version__"]
