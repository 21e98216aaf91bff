from typing import Optional


class SdpCutError(Exception):
    """Base class for all sdpcut errors"""


class InvalidSpecError(SdpCutError, ValueError):
    pass


class InvalidConfigError(SdpCutError, ValueError):
    pass


class DimensionMismatchError(SdpCutError, ValueError):
    pass


class EnumerationLimitError(SdpCutError, ValueError):
    pass


class NonConvergenceError(SdpCutError, RuntimeError):
    def __init__(self, message: str, iterations: int = 0, residual: Optional[float] = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DegenerateSpectrumError(SdpCutError, RuntimeError):
    pass
