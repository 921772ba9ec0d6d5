"""GRAFT: text-fused load forecasting on sparse modern Hopfield attention."""

from .entmax import conjugate_value, entmax, softmax, sparsemax, tsallis_entropy
from .errors import ConfigError, DimensionError, GraftError, InputError, ProtocolError, TrainingError

__version__ = "0.1.0"
