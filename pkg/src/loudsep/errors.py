"""Exception hierarchy shared by every loudsep module."""


class LoudsepError(Exception):
    """Base class for operational errors (CLI exit status 1)."""


class FormatError(LoudsepError):
    """Unsupported or malformed audio container/codec."""


class AudioIOError(LoudsepError, OSError):
    """Truncated or unreadable/unwritable audio file."""


class DataError(LoudsepError, ValueError):
    """Sample payload contains NaN/Inf or otherwise invalid values."""


class ConsistencyError(LoudsepError, ValueError):
    """Clips, stems, files or directory layouts do not line up."""


class ConfigurationError(LoudsepError, ValueError):
    """Invalid parameter combination (unsupported rate, bad range, ...)."""


class InsufficientDurationError(LoudsepError, ValueError):
    """Signal shorter than the analysis block/window it needs."""


class SilenceError(LoudsepError, ValueError):
    """No loudness block survived gating."""


class SearchError(LoudsepError, RuntimeError):
    """Threshold search could not reach the requested reduction band."""

    def __init__(self, message, bracket=None, achieved=None):
        super().__init__(message)
        self.bracket = bracket
        self.achieved = achieved


class SamplingError(LoudsepError, RuntimeError):
    """No eligible material to draw a training segment from."""


class WrappedProcessError(LoudsepError, RuntimeError):
    """External separator exited with a nonzero status."""

    def __init__(self, message, returncode=None, output=""):
        super().__init__(message)
        self.returncode = returncode
        self.output = output
