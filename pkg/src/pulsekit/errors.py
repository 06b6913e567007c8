"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for runtime failures in pipeline operations."""


class ManifestError(PipelineError):
    """A session manifest is malformed or references inconsistent data."""


class FrameLoadError(PipelineError):
    """A video frame file is missing, out of sequence, or undecodable."""


class InsufficientContextError(PipelineError):
    """A temporal augmentation needs more source frames than the session has."""


class NoSourceHrError(PipelineError):
    """No valid STFT window covers the requested clip."""
