"""Reference detector service speaking the wire protocol.

Wraps any in-process backend behind POST /v1/detect so deployments (and
tests of the remote client) have a conforming peer: 200 with the detection
document, 415 for undecodable images, 503 while no model is loaded.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response

from .backends import Backend, DetectionRequest
from .errors import BackendUnavailable, DecodeError


def create_detector_app(backend: Backend) -> FastAPI:
    app = FastAPI(title="detector")
    app.state.backend = backend
    app.state.model_loaded = True

    @app.post("/v1/detect")
    async def detect(request: Request) -> Response:
        if not app.state.model_loaded:
            return Response(status_code=503, content="model not loaded")
        body = await request.body()
        det_request = DetectionRequest(
            image_bytes=body,
            content_type=request.headers.get("content-type", "application/octet-stream"),
        )
        try:
            result = app.state.backend.detect(det_request)
        except DecodeError:
            return Response(status_code=415, content="image does not decode")
        except BackendUnavailable as exc:
            return Response(status_code=503, content=str(exc))
        return _response_json(result)

    return app


def _response_json(result) -> Response:
    payload = {
        "model_version": result.model_version,
        "latency_ms": result.backend_latency_ms,
        "detections": [
            {
                "class_name": det.cls.name,
                "confidence": det.confidence,
                "box": {
                    "x_min": det.box.x_min,
                    "y_min": det.box.y_min,
                    "x_max": det.box.x_max,
                    "y_max": det.box.y_max,
                },
            }
            for det in result.detections
        ],
    }
    return Response(content=json.dumps(payload), media_type="application/json")
