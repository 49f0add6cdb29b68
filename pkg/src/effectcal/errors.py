"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError and SchemaError exit with 2, every other
EffectcalError (numerical / estimator failures) exits with 3.
"""


class EffectcalError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(EffectcalError, ValueError):
    """An argument violates a documented precondition."""


class InsufficientDataError(EffectcalError):
    """Too few rows for the requested fit (e.g. n < p in the calibration)."""


class CollinearityError(EffectcalError):
    """Calibration features are collinear beyond the rank tolerance.

    Typically raised when the estimated contrast is (numerically) constant,
    which makes an intercept-plus-contrast basis singular. A smaller basis
    fixes it.
    """


class NumericalRankError(EffectcalError):
    """A regression design is rank-deficient even after the ridge floor."""


class DegenerateArmError(EffectcalError):
    """A cross-fitting training subset lacks treated and/or control rows."""


class QuadratureDegeneracyError(EffectcalError):
    """A quadrature-built linear system is singular."""


class SchemaError(EffectcalError):
    """A CSV file violates the dataset schema; message names row/column."""


class ConfigError(EffectcalError):
    """A config file or flag set is invalid; raised before any computation."""


class PipelineError(EffectcalError):
    """Wraps a component error with the pipeline stage where it occurred."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[stage {stage}] {cause}")
