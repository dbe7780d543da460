"""Exception hierarchy shared by all platform modules.

The service layer maps these onto HTTP status codes (see service.api).
"""


class TrinityError(Exception):
    """Base class for all platform errors."""

    error_code = "internal"


class ValidationError(TrinityError):
    """Invalid input: bad bounds, mismatched shapes, broken invariants."""

    error_code = "validation"


class ParseError(ValidationError):
    """Malformed text input; carries a 1-based line number when known."""

    error_code = "parse"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotFoundError(TrinityError):
    """Referenced entity does not exist."""

    error_code = "not_found"


class ConflictError(TrinityError):
    """Duplicate identifier or concurrent mutation of the same resource."""

    error_code = "conflict"


class StateError(TrinityError):
    """Operation not permitted in the entity's current lifecycle state."""

    error_code = "state"
