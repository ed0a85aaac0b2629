"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: validation errors exit 2,
desk-cap refusals exit 3, I/O problems exit 4.
"""


class MinlabError(Exception):
    """Base class for all package errors."""


class ValidationError(MinlabError):
    """Malformed input: bad spec parameters, dimension mismatch, degenerate sets."""


class ModelError(MinlabError):
    """Structurally valid input describing an unusable model (e.g. a radial
    density that does not integrate)."""


class CapabilityError(MinlabError):
    """A requested mode is unavailable for the given family; the message names
    the fallback."""


class DeskCapError(MinlabError):
    """Request exceeds the desk-scale resource caps; refusal is explicit,
    never silent truncation."""
