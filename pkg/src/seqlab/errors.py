"""Exception types shared across the package.

Every error raised on purpose derives from SeqLabError so callers (and the
command line driver) can separate our failures from genuine bugs.
"""


class SeqLabError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ContractError(SeqLabError):
    """A precondition on an operation or configuration was violated."""


class DimensionError(ContractError):
    """Array shapes are incompatible for the requested operation."""

    def __init__(self, op: str, *shapes):
        detail = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericError(SeqLabError):
    """A non-finite value appeared where a finite one is required."""


class ConfigError(SeqLabError):
    """A run configuration is malformed or inconsistent."""


class CheckpointError(SeqLabError):
    """A checkpoint file is missing, corrupt, or from an unknown format."""
