"""Exception hierarchy shared by all hyperspod modules."""


class HyperspodError(Exception):
    """Base class for every error raised by this package."""


# cube / file I/O
class MalformedHeader(HyperspodError):
    pass


class SizeMismatch(HyperspodError):
    pass


class NonFiniteSample(HyperspodError):
    pass


class IoFailure(HyperspodError):
    pass


class IndivisibleBandCount(HyperspodError):
    pass


# spectral model
class DegenerateBand(HyperspodError):
    pass


class LengthMismatch(HyperspodError):
    pass


class ZeroReflectanceDivisor(HyperspodError):
    pass


# scene synthesis
class EmptyTemplate(HyperspodError):
    pass


class OutOfBounds(HyperspodError):
    pass


class OverlapRejected(HyperspodError):
    pass


# annotation
class EmptyGt(HyperspodError):
    pass


class KOutOfRange(HyperspodError):
    pass


# detectors
class SingularCorrelation(HyperspodError):
    pass


# kernels
class ShapeMismatch(HyperspodError):
    pass


# assignment
class Infeasible(HyperspodError):
    pass


# evaluation
class NoGtForClass(HyperspodError):
    pass


class DegenerateGt(HyperspodError):
    pass


class ZeroVarianceBand(HyperspodError):
    pass


class FlatMapWarning(UserWarning):
    """Score map has max == min; min-max normalization is undefined."""
