"""Exception types shared across the engine."""


class AvatarError(Exception):
    """Base class for every error the engine raises on purpose."""


class BadMagic(AvatarError):
    """File does not start with the expected container magic."""


class CountMismatch(AvatarError):
    """Buffer sizes disagree with the header counts (truncated or corrupt file)."""


class InvariantViolation(AvatarError):
    """A validated data invariant failed; the message names the invariant."""


class LengthMismatch(AvatarError):
    """A parameter vector has the wrong length for the template."""


class PlaneSizeMismatch(AvatarError):
    """An attribute-map plane does not match the declared resolution."""


class ResolutionMismatch(AvatarError):
    """Attribute maps and anchor table were built at different resolutions."""


class EmptyTemplate(AvatarError):
    """Operation requires a template with at least one vertex."""


class RegionLabelMissing(AvatarError):
    """An anchor carries a region label the skinning module does not know."""


class WeightsMissing(AvatarError):
    """A Gaussian reached the skinning stage without joint weights."""


class DimensionMismatch(AvatarError):
    """Two images have different sizes."""


class NonFiniteLoss(AvatarError):
    """Fitting aborted on a NaN/inf loss; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace else []
