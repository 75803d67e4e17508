"""Exception types shared across the package."""


class DonlabError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveDepth(DonlabError, ValueError):
    pass


class InvalidDepth(DonlabError, ValueError):
    pass


class BehindCamera(DonlabError, ValueError):
    pass


class DimensionMismatch(DonlabError, ValueError):
    pass


class NoValidCorrespondences(DonlabError):
    pass


# scenegen
class PlacementFailure(DonlabError):
    pass


class NoAdmissiblePair(DonlabError):
    pass


# netcore
class ShapeMismatch(DonlabError, ValueError):
    pass


class GraphConsumed(DonlabError, RuntimeError):
    pass


# losses / eval
class DegenerateVector(DonlabError, ValueError):
    pass


class OutOfBounds(DonlabError, IndexError):
    pass


class EmptySet(DonlabError, ValueError):
    pass


class DegenerateAxis(DonlabError, ValueError):
    pass


# pipeline
class ConfigError(DonlabError, ValueError):
    pass


class DataError(DonlabError):
    """Raised for unreadable or inconsistent dataset files."""


class ParseError(DataError):
    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + where)


class ChecksumMismatch(DataError):
    pass
