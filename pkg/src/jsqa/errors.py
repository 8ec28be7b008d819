"""Exception hierarchy. The CLI maps each family to an exit code."""


class JsqaError(Exception):
    exit_code = 3


class ConfigError(JsqaError, ValueError):
    """Invalid configuration or usage."""

    exit_code = 1


class DataError(JsqaError, ValueError):
    """Bad or inconsistent input data."""

    exit_code = 2


class AudioReadError(DataError):
    pass


class UnsupportedEncodingError(DataError):
    pass


class ZeroPowerError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class ManifestMismatchError(DataError):
    """A recipe can no longer be realised from the corpora it names."""


class CheckpointError(DataError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class UndefinedCorrelationError(JsqaError, ValueError):
    """Correlation requested on data with zero variance."""

    exit_code = 2


class TrainingError(JsqaError, RuntimeError):
    exit_code = 3
