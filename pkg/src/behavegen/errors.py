"""Exception types raised across the package.

Every failure mode that callers are expected to handle gets its own class so
tests and the CLI can match on type rather than message text.
"""


class BehavegenError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(BehavegenError):
    """Array arguments disagree on a required shape."""


class DimensionMismatch(BehavegenError):
    """A vector or matrix has the wrong dimensionality for the operation."""


class NonFiniteInput(BehavegenError):
    """An input array contains NaN or infinity."""


class ZeroNormInput(BehavegenError):
    """A vector whose norm falls below the floor cannot be projected."""


class NonFiniteState(BehavegenError):
    """A rollout produced non-finite states."""


class UnstableWorld(BehavegenError):
    """World construction could not reach the requested contraction factor."""


class InvalidSpec(BehavegenError):
    """A dataset or generation spec fails validation."""


class UnknownToken(BehavegenError):
    """A prompt word is not present in the vocabulary."""


class LengthNotCompressible(BehavegenError):
    """Sequence length is not divisible by the compression factor and padding is off."""


class NonUnitInput(BehavegenError):
    """An embedding expected to be unit-norm deviates beyond tolerance."""


class DegenerateBatch(BehavegenError):
    """A batch is too small or otherwise unusable for a contrastive objective."""


class RangeError(BehavegenError):
    """A scalar argument lies outside its admissible interval."""


class DivergenceDetected(BehavegenError):
    """Training or sampling produced non-finite numbers."""


class EmptyClause(BehavegenError):
    """Prompt splitting produced a clause with no tokens."""


class OverlapTooLarge(BehavegenError):
    """Blend overlap does not fit inside the shortest neighbouring stage."""


class CountMismatch(BehavegenError):
    """Two paired collections differ in length."""


class BoundaryOutOfRange(BehavegenError):
    """A stage boundary index falls outside the valid interior of a trajectory."""


class TooFewSamples(BehavegenError):
    """A statistic needs more samples than were provided."""


class DegenerateRho(BehavegenError):
    """A pre-projection latent norm is too close to zero for the smoothing bound."""


class PreconditionViolated(BehavegenError):
    """An analytic precondition of a verified bound fails on the given input."""


class ConfigInvalid(BehavegenError):
    """A run configuration fails schema validation."""


class MissingArtifact(BehavegenError):
    """A required input file (dataset, checkpoint) is absent or malformed."""
