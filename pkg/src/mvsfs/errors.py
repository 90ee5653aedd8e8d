"""Exception types raised by the package."""


class MVSFSError(Exception):
    """Base class for all errors raised by :mod:`mvsfs`."""


class OrthographicUnsupported(MVSFSError):
    """An operation that needs a perspective camera got an orthographic one."""


class EmptyDomain(MVSFSError):
    """No masked pixel has a computable gradient."""


class NonFiniteInput(MVSFSError):
    """An input array carries NaN or inf inside the mask."""


class CgDidNotConverge(MVSFSError):
    """Conjugate gradient stopped before reaching its tolerance."""

    def __init__(self, residual, iterations):
        super().__init__(
            f"CG did not converge: relative residual {residual:.3e} after {iterations} iterations"
        )
        self.residual = residual
        self.iterations = iterations


class ViewCountTooSmall(MVSFSError):
    """Coupled solving needs at least two views."""


class InconsistentCalibration(MVSFSError):
    """View arrays disagree in size, or a camera is not usable for the view."""


class NotEnoughVisiblePixels(MVSFSError):
    """Fewer co-visible pixels than requested matches."""


class RankDeficient(MVSFSError):
    """The lighting regression matrix lacks full column rank."""

    def __init__(self, rank, channel=0):
        super().__init__(f"lighting fit is rank deficient in channel {channel}: rank {rank} < 9")
        self.rank = rank
        self.channel = channel


class DimensionMismatch(MVSFSError):
    """Two arrays that must share a shape do not."""


class ParseError(MVSFSError):
    """A text or binary file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line
