from __future__ import annotations

from .schemas import Result


def ok(data: dict) -> Result:
    """Helper to return a success result."""
    return Result(success=True, data=data)


def error(code: str, message: str) -> Result:
    """Helper to return an error result."""
    return Result(success=False, error_code=code, error_message=message)


def from_exception(exc: Exception) -> Result:
    return error(getattr(exc, "code", type(exc).__name__.upper()), str(exc))
