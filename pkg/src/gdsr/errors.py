"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericFaultError -> 4.
"""

from __future__ import annotations


class GDSRError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(GDSRError):
    pass


class DataError(GDSRError):
    """Bad input data: shapes, values, files."""


class InvalidInputError(DataError, ValueError):
    pass


class UnsupportedInputError(DataError, ValueError):
    pass


class DegenerateDataError(DataError, ValueError):
    pass


class ShapeError(DataError, ValueError):
    pass


class FormatError(DataError):
    """A binary file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class RasterFormatError(FormatError):
    pass


class CheckpointError(FormatError):
    pass


class CheckpointMismatchError(DataError):
    pass


class ContractError(GDSRError, RuntimeError):
    """An API precondition was violated by the caller."""


class NumericFaultError(GDSRError, FloatingPointError):
    def __init__(self, op: str, detail: str = "non-finite values"):
        super().__init__(f"numeric fault in {op}: {detail}")
        self.op = op
