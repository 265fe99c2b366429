"""Exception hierarchy shared by all surfkit modules."""


class SurfkitError(Exception):
    """Base class for every error raised by surfkit."""


class ShapeError(SurfkitError, ValueError):
    pass


class InvalidLabel(SurfkitError, ValueError):
    pass


class NonFiniteInput(SurfkitError, ValueError):
    pass


class FormatError(SurfkitError, ValueError):
    """Malformed SVF1 file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class EmptySources(SurfkitError, ValueError):
    pass


class EmptySurface(SurfkitError, ValueError):
    pass


class DegenerateGroundTruth(SurfkitError, ValueError):
    pass


class EmptyClassInDataset(SurfkitError, ValueError):
    pass


class InvalidAlpha(SurfkitError, ValueError):
    pass


class InvalidSchedule(SurfkitError, ValueError):
    pass


class InvalidEpoch(SurfkitError, ValueError):
    pass


class NonFiniteGradient(SurfkitError, ArithmeticError):
    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch
