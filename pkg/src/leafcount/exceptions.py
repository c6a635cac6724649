"""Exception hierarchy for the leafcount package."""


class LeafcountError(Exception):
    """Base class for all leafcount errors."""


class DatasetError(LeafcountError):
    """A dataset could not be loaded (missing files, bad annotations)."""


class AnnotationError(DatasetError):
    """An annotation CSV row is malformed."""


class PoolingError(DatasetError):
    """Pooling collections produced colliding image ids."""


class SplitError(LeafcountError):
    """A split request cannot be satisfied (e.g. too few samples)."""


class PartitionError(SplitError):
    """An equal partition request cannot be satisfied (k > N)."""


class GenerationError(LeafcountError):
    """Synthetic image generation failed (e.g. shapes cannot be placed)."""


class BuildError(LeafcountError):
    """A network could not be assembled from its specs."""


class ShapeError(LeafcountError):
    """Input array dimensions do not match what the network expects."""


class CheckpointError(LeafcountError):
    """A checkpoint file is missing, corrupt, or incompatible."""


class FusionError(LeafcountError):
    """Ensemble member outputs cannot be fused (length mismatch)."""


class EvaluationError(LeafcountError):
    """A metrics computation was asked for on invalid input."""


class ConfigError(LeafcountError):
    """A run configuration failed validation."""


class TrainingDivergedError(LeafcountError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
