"""Exception types raised across pednet."""

from __future__ import annotations


class PednetError(Exception):
    """Base class for all library errors."""


class OutOfProjectionRange(PednetError):
    pass


class DegenerateGeometry(PednetError):
    pass


class InvalidBuffer(PednetError):
    pass


class MalformedFeature(PednetError):
    pass


class UnknownNode(PednetError):
    pass


class DegenerateBlock(PednetError):
    pass


class NoCandidates(PednetError):
    pass


class EmptyCandidates(PednetError):
    pass


class InvalidFractions(PednetError):
    pass


class EmptyBBox(PednetError):
    pass


class UnknownClass(PednetError):
    pass


class LatitudeOutOfRange(PednetError):
    pass


class HttpError(PednetError):
    def __init__(self, status: int, tile):
        super().__init__(f"HTTP {status} fetching tile {tile}")
        self.status = status
        self.tile = tile


class OfflineCacheMiss(PednetError):
    pass


class MissingClassRaster(PednetError):
    pass


class ShapeMismatch(PednetError):
    pass


class ConfigError(PednetError):
    pass
