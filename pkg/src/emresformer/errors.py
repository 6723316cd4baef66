"""Exception types raised across the package."""


class EmresError(Exception):
    """Base class for all package errors."""


class ShapeError(EmresError, ValueError):
    """Operand shapes are incompatible with an operation."""

    def __init__(self, message, *shapes):
        self.shapes = tuple(tuple(s) for s in shapes)
        if shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in self.shapes)})"
        super().__init__(message)


class DomainError(EmresError, ArithmeticError):
    """An operand lies outside the mathematical domain of an operation."""


class TapeError(EmresError, RuntimeError):
    """Misuse of the differentiation tape (non-scalar loss, empty tape...)."""


class GradCheckError(EmresError, RuntimeError):
    """A finite-difference evaluation produced non-finite values."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message if index is None else f"{message} at element {index}")


class ConfigError(EmresError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class ImageFormatError(EmresError, ValueError):
    """Malformed or unsupported image file."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} [{', '.join(where)}]" if where else message)


class CheckpointError(EmresError, ValueError):
    """Checkpoint container is corrupt, truncated or of the wrong version."""


class TrainingDiverged(EmresError, RuntimeError):
    """Loss became non-finite during optimisation."""

    def __init__(self, epoch, batch, loss, param_norms):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        self.param_norms = dict(param_norms)
        worst = sorted(self.param_norms.items(), key=lambda kv: -abs(kv[1]))[:5]
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}; "
            f"largest parameter norms: {worst}"
        )
