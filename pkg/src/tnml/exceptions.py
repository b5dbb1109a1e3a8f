"""Error hierarchy for tnml.

Input and format problems subclass ValueError and numerical or state problems
subclass RuntimeError, so callers (and the CLI exit-code mapping) can catch the
builtin families without importing this module.
"""


class TnmlError(Exception):
    """Root of all tnml errors."""


class TensorError(TnmlError, ValueError):
    """Invalid tensor shape, index, permutation, scalar kind or values."""


class FeatureMapError(TnmlError, ValueError):
    """Invalid feature map parameters or input outside [0, 1]."""


class ModelFormatError(TnmlError, ValueError):
    """Model file is malformed, truncated or from another format version."""


class DataFormatError(TnmlError, ValueError):
    """IDX stream or dataset contents are malformed."""


class NumericalError(TnmlError, RuntimeError):
    """Numerical failure: divergence, non-finite cost, failed factorization."""


class CacheError(TnmlError, RuntimeError):
    """Environment cache is out of sync with the active bond."""
