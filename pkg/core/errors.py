"""
Errors Module
Exception hierarchy shared by the estimation pipeline
"""


class BinscatterError(Exception):
    """
    Base class for every error raised by the library.

    ``exit_code`` is the process status the command-line front end uses
    when the error reaches it.
    """

    exit_code = 4

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self):
        return self.message


class ConfigurationError(BinscatterError):
    """Invalid or inconsistent user configuration"""

    exit_code = 2


class UnsupportedConfigurationError(ConfigurationError):
    """Configuration that is valid in principle but not implemented"""


class DataError(BinscatterError):
    """Problems with the estimation sample itself"""

    exit_code = 3


class ParseError(DataError):
    """A cell in a numeric column could not be parsed"""

    def __init__(self, message, row=None, column=None):
        super().__init__(message, row=row, column=column)
        self.row = row
        self.column = column


class SampleSizeError(DataError):
    """Too few observations for the requested fit"""


class SelectionError(BinscatterError):
    """Bin selection failed"""


class BinCountError(SelectionError):
    """Requested number of bins exceeds what the data supports"""

    exit_code = 2


class EvaluationError(BinscatterError):
    """Evaluation point outside the support of the partition"""


class SingularFitError(BinscatterError):
    """
    Least-squares system is (numerically) singular.

    Args:
        block: "basis" or "covariates"
        index: offending bin (1-based) or covariate name
    """

    def __init__(self, message, block, index=None):
        super().__init__(message, block=block, index=index)
        self.block = block
        self.index = index


class VarianceError(BinscatterError):
    """Variance matrix is unusable (e.g. indefinite beyond tolerance)"""


class ModelError(BinscatterError):
    """Parametric model could not be fitted or evaluated"""
