"""Exception types raised across the package."""


class DranlocError(Exception):
    """Base class for all package errors."""


# geometry
class BehindCamera(DranlocError, ValueError):
    pass


# map / file I/O
class ParseError(DranlocError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class IntegrityError(DranlocError, ValueError):
    pass


class UnknownId(DranlocError, KeyError):
    pass


class BadMagic(ParseError):
    pass


class ChecksumError(ParseError):
    pass


# features
class OutOfBounds(DranlocError, ValueError):
    pass


class BadStride(DranlocError, ValueError):
    pass


class EmptyInput(DranlocError, ValueError):
    pass


class ExtentMismatch(DranlocError, ValueError):
    pass


# retrieval
class NonFiniteInput(DranlocError, ValueError):
    pass


class ZeroVector(DranlocError, ValueError):
    pass


class TooFewSamples(DranlocError, ValueError):
    pass


class EmptyDatabase(DranlocError, ValueError):
    pass


# rerank
class DepthMismatch(DranlocError, ValueError):
    pass


class TooFewMatches(DranlocError, ValueError):
    pass


class NoModelFound(DranlocError, RuntimeError):
    pass


# align
class LevelMissing(DranlocError, KeyError):
    pass


class NoValidPoints(DranlocError, ValueError):
    pass


class SingularSystem(DranlocError, ArithmeticError):
    pass


# synth / config
class ConfigError(DranlocError, ValueError):
    pass


class NoIntersection(DranlocError, ValueError):
    pass
