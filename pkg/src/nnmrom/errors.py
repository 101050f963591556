"""Exception hierarchy shared by all nnmrom modules."""


class NnmRomError(Exception):
    """Base class for every error raised by this package."""


class InvalidParams(NnmRomError, ValueError):
    pass


class DimensionMismatch(NnmRomError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class IndexOutOfRange(NnmRomError, IndexError):
    pass


class SeriesTooShort(NnmRomError, ValueError):
    pass


class ZeroVariance(NnmRomError, ValueError):
    def __init__(self, channel, message=None):
        self.channel = channel
        super().__init__(message or f"channel {channel} has zero variance")


class SingularInputSpectrum(NnmRomError, ArithmeticError):
    pass


class NonFiniteState(NnmRomError, ArithmeticError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class NonFiniteLoss(NnmRomError, ArithmeticError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class NonFinitePrediction(NnmRomError, ArithmeticError):
    def __init__(self, step, partial=None, message=None):
        self.step = step
        self.partial = partial
        super().__init__(message or f"non-finite prediction at step {step}")


class StaleCache(NnmRomError, RuntimeError):
    pass


class ConfigInconsistent(NnmRomError, ValueError):
    pass


class VersionMismatch(NnmRomError):
    pass


class CorruptFile(NnmRomError):
    pass
