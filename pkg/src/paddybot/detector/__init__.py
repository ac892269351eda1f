from .backends import (
    BACKEND_KINDS,
    DEFAULT_COLOR_MAP,
    Backend,
    BackendConfig,
    DetectionRequest,
    DetectionResponse,
    FixtureBackend,
    RemoteBackend,
    SyntheticBackend,
    decode_image,
    detect,
    fixture_config,
    make_backend,
    remote_config,
    synthetic_config,
)
from .errors import BackendUnavailable, DecodeError, DetectorError, DetectTimeout
from .render import render_annotation, render_preview
from .synth import synth_image

__all__ = [
    "BACKEND_KINDS",
    "DEFAULT_COLOR_MAP",
    "Backend",
    "BackendConfig",
    "BackendUnavailable",
    "DecodeError",
    "DetectTimeout",
    "DetectorError",
    "DetectionRequest",
    "DetectionResponse",
    "FixtureBackend",
    "RemoteBackend",
    "SyntheticBackend",
    "decode_image",
    "detect",
    "fixture_config",
    "make_backend",
    "remote_config",
    "render_annotation",
    "render_preview",
    "synth_image",
    "synthetic_config",
]
