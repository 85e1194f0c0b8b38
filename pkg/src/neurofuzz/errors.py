"""Exception types raised across the workbench."""


class NeurofuzzError(Exception):
    """Base class for every error raised by this package."""


class CorpusTooSmall(NeurofuzzError):
    pass


class EmptyCorpus(NeurofuzzError):
    pass


class IndexOutOfAlphabet(NeurofuzzError):
    pass


class TextTooShort(NeurofuzzError):
    pass


class ShapeMismatch(NeurofuzzError):
    pass


class MissingCache(NeurofuzzError):
    pass


class NonFiniteLoss(NeurofuzzError):
    pass


class CorruptCheckpoint(NeurofuzzError):
    pass


class MaxLenExceeded(NeurofuzzError):
    """Raised when a sampled tag hits ``max_len`` before a newline.

    The truncated text is kept on ``partial`` so callers can count or log it.
    """

    def __init__(self, message: str, partial: str = ""):
        super().__init__(message)
        self.partial = partial


class RetryBudgetExhausted(NeurofuzzError):
    pass


class NotDivisible(NeurofuzzError):
    pass


class EmptyInput(NeurofuzzError):
    pass


class MissingArtifacts(NeurofuzzError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing artifacts: " + ", ".join(self.missing))


class DrcovError(NeurofuzzError):
    """Parse failure in a drcov log; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MalformedHeader(DrcovError):
    pass


class TruncatedBlockTable(DrcovError):
    pass


class BadModuleIndex(DrcovError):
    pass


class SpawnFailed(NeurofuzzError):
    pass


class TargetTimeout(NeurofuzzError):
    pass


class NoLogProduced(NeurofuzzError):
    pass


class ConfigError(NeurofuzzError):
    pass
