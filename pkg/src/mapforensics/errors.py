"""Exception types shared across the toolkit."""


class MapForensicsError(Exception):
    """Base class for every error raised by this package."""


class VocabularyError(MapForensicsError):
    """A value is not admissible under the active vocabulary.

    `field` names the offending prompt field ("map_type", "region",
    "place", "description").
    """

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


class VocabularyFormatError(MapForensicsError):
    """The vocabulary file is malformed."""


class UnknownLevelError(MapForensicsError):
    """A region level outside {state, country, continent}."""


class PromptParseError(MapForensicsError):
    """A prompt string does not match the template and vocabulary."""


class InvalidQuotaError(MapForensicsError):
    """A generation quota is missing, non-integral, or not positive."""


class UndecodableImageError(MapForensicsError):
    """Payload bytes do not decode as a raster image."""


class LabelPromptMismatchError(MapForensicsError):
    """ai_generated records require a prompt; human_designed forbid one."""


class FractionsNotNormalizedError(MapForensicsError):
    """Split fractions are negative or do not sum to exactly 1."""


class SplitsAlreadyAssignedError(MapForensicsError):
    """assign_splits called on a manifest with splits set and force=False."""


class SchemaVersionError(MapForensicsError):
    """A persisted file carries an unknown schema version."""


class ManifestFormatError(MapForensicsError):
    """A manifest/plan file is corrupt or structurally invalid."""


class CheckpointError(MapForensicsError):
    """A checkpoint file is missing fields or cannot be loaded."""


class UnsupportedDepthError(MapForensicsError):
    """Requested backbone depth outside {18, 34, 50}."""


class EmptySplitError(MapForensicsError):
    """An operation needs a nonempty split that has no records."""


class NonFiniteLossError(MapForensicsError):
    """Training loss became NaN/inf; carries the epoch and batch index."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class BackendUnavailableError(MapForensicsError):
    """An acquisition backend is unreachable or misconfigured."""


class RateLimitedError(MapForensicsError):
    """The backend rate-limited the request even after retries."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class ContentRejectedError(MapForensicsError):
    """The generation backend refused the prompt."""


class EmptyMatrixError(MapForensicsError):
    """Metrics requested for a confusion matrix with zero total."""
