"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`CotAnnealError` so
callers can catch one base type.  The CLI maps subtrees of this hierarchy to
process exit codes.
"""

from __future__ import annotations


class CotAnnealError(Exception):
    """Base class for all package errors."""


class InputError(CotAnnealError, ValueError):
    """Malformed caller input: bad shapes, out-of-range parameters, bad labels."""


class ValidationError(InputError):
    """A structured artifact (config, dataset, model file) failed validation."""


class ConfigurationError(ValidationError):
    """A run configuration is internally inconsistent or incomplete."""


class TransportError(CotAnnealError):
    """An HTTP exchange failed after exhausting retries.

    ``attempts`` records how many tries were made before giving up.
    """

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProviderError(CotAnnealError):
    """The remote provider answered, but with an error payload or an
    unusable body (missing choices, wrong shape)."""


class FixtureError(CotAnnealError):
    """A recorded-exchange store could not satisfy a request in replay mode."""


class AdapterError(CotAnnealError):
    """An external solver adapter produced an unusable or invalid response."""


class UnparsedAnswerError(CotAnnealError):
    """No answer label could be recovered from a completion's final text."""

    def __init__(self, text: str, allowed: tuple[str, ...] = ()):
        short = text if len(text) <= 200 else text[:200] + "..."
        super().__init__(f"no answer label found in completion text: {short!r}")
        self.text = text
        self.allowed = allowed


class StageError(CotAnnealError):
    """A pipeline stage failed; wraps the original cause for diagnostics."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.__cause__ = cause
