"""Exception hierarchy. Each family maps to a CLI exit code."""


class GaisError(Exception):
    exit_code = 1


class ConfigError(GaisError):
    exit_code = 2


class DataError(GaisError):
    exit_code = 3


class MissingFileError(DataError):
    pass


class RaggedRowError(DataError):
    pass


class MissingColumnError(DataError):
    pass


class CellParseError(DataError):
    pass


class NumericError(GaisError):
    exit_code = 4


class UnsupportedOpError(NumericError):
    pass


class TestSplitLocked(GaisError):
    """Raised when test labels are requested before the evaluate stage."""

    __test__ = False
