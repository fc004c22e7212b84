"""Exception hierarchy shared by every pipeline stage.

Each class carries an ``exit_code`` used by the command-line front end:
2 for usage problems, 3 for data problems and 4 for backend failures.
"""


class CfPipeError(Exception):
    exit_code = 3


class UsageError(CfPipeError):
    exit_code = 2


class DataError(CfPipeError, ValueError):
    exit_code = 3


class BackendError(CfPipeError):
    exit_code = 4


class MaskCountError(DataError):
    """The masked text does not contain exactly one mask placeholder."""


class DecodeError(BackendError):
    """An image could not be read or decoded."""


class TaggerError(DataError):
    pass


class AllCandidatesFailed(BackendError):
    """Every perplexity call for a caption's surviving candidates failed."""


class PairGenerationFailed(BackendError):
    """Not a single image pair could be generated for a caption pair."""


class DegenerateDirectionError(DataError):
    """A text or image difference vector has (near) zero norm."""


class ZeroNormError(DataError):
    pass


class ConfigError(UsageError, ValueError):
    pass


class SchemaError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LinkageError(DataError):
    """A counterfactual record's paired counterpart is missing."""


class CoverageError(DataError):
    """Some manifest records have no annotation."""


class EmptyInput(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptyGallery(DataError):
    pass


class UnevenRaters(DataError):
    pass


class DegenerateError(DataError):
    pass


class ZeroVariance(DataError):
    pass


class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class UndefinedRate(DataError):
    pass
