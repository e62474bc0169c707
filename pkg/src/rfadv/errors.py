"""Exception types.  ``exit_code`` is what the CLI returns for each family."""


class RfadvError(Exception):
    exit_code = 4
    kind = "error"


class ConfigError(RfadvError, ValueError):
    exit_code = 2
    kind = "config-parse"


class InvalidParams(RfadvError, ValueError):
    exit_code = 2
    kind = "invalid-params"


class MissingArtifact(RfadvError, FileNotFoundError):
    exit_code = 3
    kind = "missing-artifact"


class NumericFailure(RfadvError, ArithmeticError):
    exit_code = 4
    kind = "numeric-failure"


class NonFiniteOutput(NumericFailure):
    kind = "non-finite-output"


class DegenerateInput(NumericFailure):
    kind = "degenerate-input"


class NoDetection(NumericFailure):
    kind = "no-detection"


class Divergence(NumericFailure):
    kind = "divergence"


class NoFlip(NumericFailure):
    kind = "no-flip"


class ShapeMismatch(RfadvError, ValueError):
    exit_code = 4
    kind = "shape-mismatch"


class UnknownArch(InvalidParams):
    kind = "unknown-arch"


class TooFewExamples(InvalidParams):
    kind = "too-few-examples"


class EmptyInput(InvalidParams):
    kind = "empty-input"


class ScenarioInvariantViolation(InvalidParams):
    kind = "scenario-invariant-violation"


class VerificationFailure(RfadvError):
    exit_code = 5
    kind = "verification-failure"


class ChecksumMismatch(VerificationFailure):
    kind = "checksum-mismatch"


class FormatVersionMismatch(VerificationFailure):
    kind = "format-version-mismatch"
