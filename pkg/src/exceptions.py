"""
Error types for the Road-Mask Tree Mapping Toolkit

Each error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class ToolkitError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 1


class FormatError(ToolkitError):
    """Malformed, truncated or unrecognised input data"""

    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(ToolkitError, ValueError):
    """An argument or geometry violates a type invariant"""

    exit_code = 4


class BoundsError(ValidationError, IndexError):
    """A pixel index lies outside its grid"""


class NetworkError(ToolkitError):
    """HTTP transport failure or unexpected status"""

    exit_code = 3

    def __init__(self, message: str, status: Optional[int] = None):
        super().__init__(message)
        self.status = status


class RateLimitError(NetworkError):
    """The server answered 429 Too Many Requests"""

    def __init__(self, message: str, retry_after: Optional[float] = None):
        if retry_after is not None:
            message = f"{message} (retry after {retry_after:g} s)"
        super().__init__(message, status=429)
        self.retry_after = retry_after


class NetworkTimeoutError(NetworkError):
    """The request did not complete within its timeout"""
