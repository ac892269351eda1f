"""Failure modes shared by all detector backends."""


class DetectorError(Exception):
    pass


class DecodeError(DetectorError):
    """Request bytes do not decode to a raster image."""


class BackendUnavailable(DetectorError):
    """The backend cannot serve right now (unreachable, model not loaded)."""


class DetectTimeout(DetectorError):
    """The deadline elapsed before the backend produced a response."""
