"""Exception types shared across the package."""


class OxcimError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(OxcimError, ValueError):
    """Operand dimensions do not line up (vector lengths, tile bounds, layer chains)."""


class DomainError(OxcimError, ValueError):
    """A numeric input is outside its valid domain (non-finite, out of range)."""


class ConfigError(OxcimError, ValueError):
    """A configuration object is inconsistent or missing required entries."""


class ParseError(OxcimError, ValueError):
    """A file could not be parsed.  Carries enough context to locate the defect."""

    def __init__(self, message, *, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.line = line
        self.offset = offset


class TrainingDiverged(OxcimError, RuntimeError):
    """Training loss became non-finite; aborting instead of continuing blindly."""
