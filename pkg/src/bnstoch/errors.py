"""Exception types raised across the package."""


class BNStochError(Exception):
    """Base class for all package errors."""


class ValidationError(BNStochError, ValueError):
    """Bad input: malformed files, inconsistent shapes, invalid configs."""


class CyclicStructure(ValidationError):
    pass


class ZeroEvidenceProbability(BNStochError):
    """The evidence of a query has probability zero under the network."""


class NetworkFormatError(ValidationError):
    pass


class UnknownLabel(ValidationError):
    pass


class RaggedRow(ValidationError):
    pass


class EmptyFile(ValidationError):
    pass


class AlreadyIncomplete(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ParentLimitExceeded(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NoMissingCells(BNStochError):
    """A data move was requested on a dataset with no missing cells."""


class NoFeasibleMove(BNStochError):
    pass


class EmptyPopulation(ValidationError):
    pass


class PopulationTooSmall(ValidationError):
    pass


class DegenerateChains(BNStochError):
    """All post burn-in chains are constant, so the within-chain variance is zero."""


class EmptyHoldout(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class DigestsAbsent(ValidationError):
    pass
