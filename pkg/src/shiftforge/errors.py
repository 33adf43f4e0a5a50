"""Exception types shared across the package."""


class ShiftForgeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(ShiftForgeError):
    """Malformed or schema-violating input file."""


class ValidationError(ShiftForgeError):
    """Inputs are well-formed but violate a documented contract."""


class PipelineError(ShiftForgeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
