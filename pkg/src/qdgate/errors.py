"""Exception hierarchy.

``ConfigError`` covers bad inputs (exit code 2 in the CLI) and
``NumericalError`` covers failures of the numerical machinery (exit code 3).
"""


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class DegenerateDressing(ConfigError):
    pass


class InvalidDetuning(ConfigError):
    pass


class NegativeRadicand(ConfigError):
    pass


class NonzeroMixing(ConfigError):
    pass


class NegativeFrequency(ConfigError):
    pass


class NonpositiveFrequency(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class StepTooLarge(ConfigError):
    pass


class DivergentIntegral(NumericalError):
    pass


class StepLimitExceeded(NumericalError):
    pass


class ToleranceFailure(NumericalError):
    pass


class UnresolvedSpectrum(NumericalError):
    pass


class NonUnimodal(RuntimeWarning):
    """Raised as a warning when the readout objective cannot be bracketed."""
