"""Exception hierarchy shared by every module."""


class MvHomoError(Exception):
    """Base class for all package errors."""


class DegenerateConfiguration(MvHomoError):
    """Singular design matrix, collinear points or a non-invertible homography."""


class PointAtInfinity(MvHomoError):
    """Homogeneous denominator underflowed while mapping a point."""


class DimensionMismatch(MvHomoError):
    """Inputs that must share a shape do not."""


class ImageTooSmall(MvHomoError):
    """Image cannot support the requested pyramid or estimator."""


class WindowTooLarge(MvHomoError):
    """Projector window exceeds the image."""


class ParamOutOfRange(MvHomoError):
    """A scene or estimator parameter is outside its documented range."""


class EmptyMask(MvHomoError):
    """A weighted mean was requested over a mask that sums to zero."""


class FormatError(MvHomoError):
    """Corrupt or malformed file.

    ``offset`` is the byte offset (binary formats) and ``line`` the 1-based line
    number (text formats) where parsing failed, when known.
    """

    def __init__(self, message, offset=None, line=None):
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class VersionError(FormatError):
    """Unknown magic number or file version."""
