"""Exception hierarchy shared by every module.

Each exception carries an ``exit_code`` used by the command line driver:
2 for configuration problems, 3 for failed certificates, 4 for numerical
breakdowns.
"""


class OselabError(Exception):
    exit_code = 4


class ConfigError(OselabError):
    exit_code = 2


class CertificateFailure(OselabError):
    exit_code = 3


class NumericalFailure(OselabError):
    exit_code = 4


class NegativeIterateOfNonInvertible(ConfigError):
    pass


class SpaceMismatch(ConfigError):
    pass


class NormMismatch(ConfigError):
    pass


class AmbientMismatch(ConfigError):
    pass


class BlockSizeExceedsDimension(ConfigError):
    pass


class ConstraintViolation(ConfigError):
    pass


class ScenarioError(ConfigError):
    pass


class DegeneratePair(ConfigError):
    pass


class SingularGenerator(NumericalFailure):
    pass


class RankDeficientBasis(NumericalFailure):
    pass


class IllConditionedSplitting(NumericalFailure):
    pass


class TransversalityFailure(NumericalFailure):
    pass


class SeriesDivergence(NumericalFailure):
    pass


class HorizonTooShort(NumericalFailure):
    pass


class IntersectionRankDeficit(NumericalFailure):
    pass


class BlockSingular(NumericalFailure):
    pass


class UnreachableGamma(CertificateFailure):
    pass


class HypothesisSynthesisFailure(NumericalFailure):
    pass


class PairOutsideRegularSet(CertificateFailure):
    pass


class PairTooFar(CertificateFailure):
    pass


class DegenerateDesign(NumericalFailure):
    pass


class SeriesDivergenceWarning(RuntimeWarning):
    """Partial sums of a weighted series did not decay geometrically."""
