"""Exception types shared across the toolkit."""

from __future__ import annotations


class PavevalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PavevalError, ValueError):
    """Input violates a documented invariant or precondition."""


class ParseError(ValidationError):
    """A document could not be parsed.

    ``path`` names the offending location: a JSON path such as ``$[3].bbox``
    or a ``line N`` marker for text formats.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UnknownClassError(ValidationError):
    """A class name or index is not one of the seven distress labels."""

    def __init__(self, value: object, path: str | None = None):
        self.value = value
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}unknown distress class {value!r}")
