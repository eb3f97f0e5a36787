"""Exception types shared across the package."""
from __future__ import annotations



class SSIterError(Exception):
    """Base class for all errors raised by ssiter."""


class ZeroDiagonal(SSIterError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"diagonal entry {index} is zero; Jacobi split undefined")
        self.index = index


class Singular(SSIterError, ValueError):
    pass


class DominanceViolated(SSIterError, ValueError):
    pass


class NotContractive(SSIterError, ValueError):
    def __init__(self, norm_b: float, reason: str | None = None):
        super().__init__(reason or f"||B||_inf = {norm_b!r} >= 1; envelope undefined")
        self.norm_b = norm_b


class ConfigError(SSIterError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class ParseError(SSIterError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


class DimensionMismatch(SSIterError, ValueError):
    pass


class BadCovariance(SSIterError, ValueError):
    pass


class TooFewSamples(SSIterError, ValueError):
    pass
