class ConfigurationError(ValueError):
    """A configuration or manifest value is invalid or missing."""


class FormatError(ValueError):
    """A file does not follow its declared on-disk layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MethodologyError(RuntimeError):
    """An operation would leak poisoned data into a step that must stay clean."""


class TrialFailure(RuntimeError):
    """A search or training run diverged; recorded as an audit outcome, not a crash."""
