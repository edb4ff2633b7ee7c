"""
Exception hierarchy for the BPTD toolkit

Library code raises these; only the command-line layer turns them into exit codes.
"""


class BPTDError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 1


class ConfigError(BPTDError):
    """Invalid run configuration or command-line usage"""

    exit_code = 2


class DataError(BPTDError, ValueError):
    """Malformed input, out-of-range indices or an empty data set"""

    exit_code = 3


class ParameterError(DataError):
    """Invalid parameters passed to a random variate generator"""


class NumericalError(BPTDError, ArithmeticError):
    """A sampler produced a zero normalizer or a non-finite quantity"""

    exit_code = 4
