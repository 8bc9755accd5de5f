"""Exception types shared across the package."""


class PipganError(Exception):
    """Base class for all package-specific failures."""


class UnknownCategoryError(PipganError):
    """A category name or index is not part of the attribute schema."""


class DuplicateRecordError(PipganError):
    """A (subject, pose, expression) key appears more than once in a manifest."""


class MissingImageError(PipganError):
    """A manifest row points at an image file that does not exist."""


class MissingSourceError(PipganError):
    """Subjects lack the neutral source image required for stage pairing."""

    def __init__(self, subject_ids):
        self.subject_ids = sorted(subject_ids)
        super().__init__(f"subjects missing source image: {', '.join(self.subject_ids)}")


class SchemaMismatchError(PipganError):
    """A checkpoint's attribute schema does not match the expected one."""


class SizeMismatchError(PipganError):
    """Two pipeline stages were trained at incompatible image sizes."""


class CheckpointError(PipganError):
    """A checkpoint archive is corrupt, incomplete, or of an unknown version."""


class NonFiniteLossError(PipganError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term, step, value):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss '{term}' at step {step}: {value}")


class MissingPairsError(PipganError):
    """Evaluation pairs named by the manifest are absent from a directory."""

    def __init__(self, missing_ids):
        self.missing_ids = list(missing_ids)
        super().__init__(f"missing evaluation pairs: {', '.join(self.missing_ids)}")


class CapabilityError(PipganError):
    """The numeric backend lacks a required capability (double backward)."""
