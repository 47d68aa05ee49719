"""Exception hierarchy shared across the package."""


class SynthfitError(Exception):
    """Base class for all package errors."""


class DataError(SynthfitError, ValueError):
    """Invalid input data: bad shapes, out-of-range values, malformed files."""


class ShapeMismatchError(DataError):
    pass


class ImageFormatError(DataError):
    pass


class MissingFileError(ImageFormatError, FileNotFoundError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class CorruptHeaderError(ImageFormatError):
    pass


class MeshFormatError(DataError):
    pass


class NumericalError(SynthfitError, ArithmeticError):
    """A numerical procedure produced NaN or diverged."""


class ObjectiveNaNError(NumericalError):
    def __init__(self, theta, message="objective returned NaN"):
        super().__init__(f"{message} at theta={list(theta)}")
        self.theta = theta


class DivergenceError(NumericalError):
    def __init__(self, epoch, message="training loss became NaN"):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class UnlearnablePoolError(SynthfitError):
    """No weak learner in the pool beats chance on the first boosting round."""
