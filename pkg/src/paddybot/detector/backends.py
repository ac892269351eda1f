"""Detection backends behind one contract.

Three kinds: ``mock_fixture`` replays canned detections keyed by content
hash, ``mock_synthetic`` finds solid color rectangles in generated scenes,
and ``remote`` speaks the wire protocol of an external model server
(POST /v1/detect). The mocks keep the whole pipeline testable without any
model in process.
"""

from __future__ import annotations

import io
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np
from PIL import Image, ImageColor, UnidentifiedImageError
from scipy import ndimage

from ..domain import (
    BoundingBox,
    ClassRegistry,
    DegenerateBox,
    Detection,
    content_hash,
    default_registry,
    validate_box,
)
from .errors import BackendUnavailable, DecodeError, DetectTimeout

BACKEND_KINDS = ("mock_fixture", "mock_synthetic", "remote")

# Scene colors understood by the synthetic backend, one per stock class.
DEFAULT_COLOR_MAP = {
    "#ff0000": "blast",
    "#00ff00": "blight",
    "#0000ff": "bsp",
    "#ffff00": "nbs",
    "#ff00ff": "streak",
}


@dataclass(frozen=True)
class DetectionRequest:
    image_bytes: bytes
    content_type: str = "image/png"
    request_id: str = ""
    deadline_s: float = 10.0

    def __post_init__(self) -> None:
        if self.deadline_s <= 0:
            raise ValueError("deadline must be positive")


@dataclass(frozen=True)
class DetectionResponse:
    detections: tuple[Detection, ...]
    model_version: str
    backend_latency_ms: float


@dataclass(frozen=True)
class BackendConfig:
    """Exactly one kind's parameters may be populated."""

    kind: str
    endpoint: str | None = None
    fixture_path: str | None = None
    color_map: dict[str, str] | None = None
    confidence_floor: float = 0.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"backend kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        populated = {
            "remote": self.endpoint is not None,
            "mock_fixture": self.fixture_path is not None,
            "mock_synthetic": self.color_map is not None,
        }
        if not populated[self.kind]:
            raise ValueError(f"backend kind {self.kind!r} is missing its parameters")
        if sum(populated.values()) != 1:
            raise ValueError("exactly one backend kind's parameters may be set")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError("confidence_floor must be in [0,1]")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


def synthetic_config(color_map: dict[str, str] | None = None, **kwargs) -> BackendConfig:
    return BackendConfig(kind="mock_synthetic", color_map=dict(color_map or DEFAULT_COLOR_MAP), **kwargs)


def fixture_config(fixture_path: str | Path, **kwargs) -> BackendConfig:
    return BackendConfig(kind="mock_fixture", fixture_path=str(fixture_path), **kwargs)


def remote_config(endpoint: str, **kwargs) -> BackendConfig:
    return BackendConfig(kind="remote", endpoint=endpoint, **kwargs)


class Backend(Protocol):
    def detect(self, request: DetectionRequest) -> DetectionResponse: ...


def decode_image(data: bytes) -> Image.Image:
    try:
        image = Image.open(io.BytesIO(data))
        image.load()
        return image
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"image bytes do not decode: {exc}") from None


def _finalize(
    detections: list[Detection],
    frame: tuple[int, int],
    floor: float,
    model_version: str,
    started: float,
) -> DetectionResponse:
    """Clamp boxes to the frame, apply the confidence floor, sort by rank.

    Boxes that lose all area in the clamp are dropped rather than failing
    the whole response.
    """
    width, height = frame
    kept: list[Detection] = []
    for det in detections:
        if det.confidence < floor:
            continue
        try:
            box = validate_box(det.box, width, height)
        except DegenerateBox:
            continue
        kept.append(Detection(box=box, cls=det.cls, confidence=det.confidence))
    kept.sort(key=lambda d: -d.confidence)
    latency_ms = (time.perf_counter() - started) * 1000.0
    return DetectionResponse(
        detections=tuple(kept), model_version=model_version, backend_latency_ms=latency_ms
    )


class FixtureBackend:
    """Replays detections from a fixture file keyed by image content hash.

    Fixture format: {"<sha256>": [{"class_name": ..., "confidence": ...,
    "box": {"x_min": ..., "y_min": ..., "x_max": ..., "y_max": ...}}, ...]}
    Unknown hashes yield an empty detection list.
    """

    model_version = "mock-fixture"

    def __init__(self, config: BackendConfig, registry: ClassRegistry | None = None) -> None:
        self.config = config
        self.registry = registry or default_registry()
        raw = json.loads(Path(config.fixture_path).read_text(encoding="utf-8"))
        self._by_hash: dict[str, list[dict]] = {str(k): list(v) for k, v in raw.items()}

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        started = time.perf_counter()
        image = decode_image(request.image_bytes)
        digest = content_hash(request.image_bytes)
        detections = [
            Detection(
                box=BoundingBox(
                    float(rec["box"]["x_min"]), float(rec["box"]["y_min"]),
                    float(rec["box"]["x_max"]), float(rec["box"]["y_max"]),
                ),
                cls=self.registry.ensure(str(rec["class_name"])),
                confidence=float(rec["confidence"]),
            )
            for rec in self._by_hash.get(digest, [])
        ]
        return _finalize(
            detections, image.size, self.config.confidence_floor, self.model_version, started
        )


def synthetic_confidence(area_fraction: float) -> float:
    """Deterministic stand-in confidence: affine in the rectangle's share of
    the frame, clipped to [0.5, 0.99] so ranking code paths get exercised."""
    return min(0.99, max(0.5, 0.5 + 2.0 * area_fraction))


class SyntheticBackend:
    """Detects solid axis-aligned color rectangles in generated scenes.

    Each mapped color is located by exact pixel match; connected components
    become detections with that color's class. Pure function of the bytes.
    """

    model_version = "mock-synthetic"

    def __init__(self, config: BackendConfig, registry: ClassRegistry | None = None) -> None:
        self.config = config
        self.registry = registry or default_registry()
        self._colors: list[tuple[tuple[int, int, int], str]] = [
            (ImageColor.getrgb(color), str(name))
            for color, name in sorted(config.color_map.items())
        ]

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        started = time.perf_counter()
        image = decode_image(request.image_bytes).convert("RGB")
        pixels = np.asarray(image)
        frame_area = float(pixels.shape[0] * pixels.shape[1])
        detections: list[Detection] = []
        for rgb, class_name in self._colors:
            mask = np.all(pixels == np.array(rgb, dtype=pixels.dtype), axis=-1)
            if not mask.any():
                continue
            labeled, count = ndimage.label(mask)
            for component in ndimage.find_objects(labeled, count):
                if component is None:
                    continue
                rows, cols = component
                box = BoundingBox(
                    float(cols.start), float(rows.start), float(cols.stop), float(rows.stop)
                )
                detections.append(
                    Detection(
                        box=box,
                        cls=self.registry.ensure(class_name),
                        confidence=synthetic_confidence(box.area / frame_area),
                    )
                )
        return _finalize(
            detections, image.size, self.config.confidence_floor, self.model_version, started
        )


class RemoteBackend:
    """Client for an external detector speaking POST {endpoint}/v1/detect.

    Concurrent calls beyond ``max_in_flight`` wait on a semaphore, bounded
    by the request deadline. Responses are parsed, clamped and re-ranked
    locally so the rest of the system never sees a malformed box.
    """

    def __init__(
        self,
        config: BackendConfig,
        registry: ClassRegistry | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.config = config
        self.registry = registry or default_registry()
        self._client = client or httpx.Client()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def detect(self, request: DetectionRequest) -> DetectionResponse:
        started = time.perf_counter()
        image = decode_image(request.image_bytes)
        if not self._slots.acquire(timeout=request.deadline_s):
            raise DetectTimeout("all backend slots busy until the deadline")
        try:
            remaining = request.deadline_s - (time.perf_counter() - started)
            if remaining <= 0:
                raise DetectTimeout("deadline elapsed while waiting for a slot")
            try:
                response = self._client.post(
                    self.config.endpoint.rstrip("/") + "/v1/detect",
                    content=request.image_bytes,
                    headers={"Content-Type": request.content_type},
                    timeout=remaining,
                )
            except httpx.TimeoutException as exc:
                raise DetectTimeout(str(exc)) from None
            except httpx.HTTPError as exc:
                raise BackendUnavailable(str(exc)) from None
        finally:
            self._slots.release()
        if response.status_code == 415:
            raise DecodeError("backend rejected the image as undecodable")
        if response.status_code == 503:
            raise BackendUnavailable("backend model not loaded")
        if response.status_code != 200:
            raise BackendUnavailable(f"backend returned status {response.status_code}")
        payload = response.json()
        detections = [
            Detection(
                box=BoundingBox(
                    float(rec["box"]["x_min"]), float(rec["box"]["y_min"]),
                    float(rec["box"]["x_max"]), float(rec["box"]["y_max"]),
                ),
                cls=self.registry.ensure(str(rec["class_name"])),
                confidence=float(rec["confidence"]),
            )
            for rec in payload.get("detections", [])
        ]
        return _finalize(
            detections,
            image.size,
            self.config.confidence_floor,
            str(payload.get("model_version", "unknown")),
            started,
        )


def make_backend(
    config: BackendConfig,
    registry: ClassRegistry | None = None,
    client: httpx.Client | None = None,
) -> Backend:
    if config.kind == "mock_fixture":
        return FixtureBackend(config, registry)
    if config.kind == "mock_synthetic":
        return SyntheticBackend(config, registry)
    return RemoteBackend(config, registry, client=client)


def detect(request: DetectionRequest, config: BackendConfig) -> DetectionResponse:
    """One-shot convenience wrapper; services should hold a backend instance."""
    return make_backend(config).detect(request)
