"""
Exceptions raised by tdoaspace

The command line maps ValidationError to exit code 2 and NumericError to 3.
"""

from typing import Optional


class TdoaSpaceError(Exception):
    """Base class for all package errors"""


class ValidationError(TdoaSpaceError, ValueError):
    """Invalid input: bad domain, malformed file, non-PD covariance"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericError(TdoaSpaceError, ArithmeticError):
    """A computation could not produce a trustworthy result"""


class RankAmbiguityError(NumericError):
    """Singular values fall inside the ambiguity band"""
