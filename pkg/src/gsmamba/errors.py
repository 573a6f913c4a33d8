"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible with the operation."""


class ContractError(RuntimeError):
    """A documented precondition was violated at runtime."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""


class DecodeError(ValueError):
    """Malformed file contents; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
