"""Shared fixtures: fake messaging platform, signed webhook helper, scenes."""

from __future__ import annotations

import itertools
import json
import threading
import time
from types import SimpleNamespace

import pytest
from fastapi.testclient import TestClient

from paddybot.detector import SyntheticBackend, synth_image, synthetic_config
from paddybot.domain import BoundingBox, default_registry
from paddybot.gateway import create_app
from paddybot.gateway.app import SIGNATURE_HEADER, compute_signature
from paddybot.gateway.config import GatewayConfig
from paddybot.gateway.lineclient import PlatformError
from paddybot.store import Store

CHANNEL_SECRET = "test-channel-secret"


class FakePlatform:
    """In-memory stand-in for the messaging platform's HTTP API."""

    def __init__(self) -> None:
        self.content: dict[str, tuple[bytes, str]] = {}
        self.replies: list[tuple[str, list[dict]]] = []
        self.fail_replies = False
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def add_content(self, message_id: str, data: bytes, content_type: str = "image/png"):
        self.content[message_id] = (data, content_type)

    def fetch_content(self, message_id: str) -> tuple[bytes, str]:
        if message_id not in self.content:
            raise PlatformError(f"no content for {message_id!r}")
        return self.content[message_id]

    def reply(self, reply_token: str, messages: list[dict]) -> list[str]:
        if self.fail_replies:
            raise PlatformError("reply rejected")
        with self._lock:
            self.replies.append((reply_token, [dict(m) for m in messages]))
            return [f"sent-{next(self._ids)}" for _ in messages]

    def replies_for(self, reply_token: str) -> list[list[dict]]:
        return [messages for token, messages in self.replies if token == reply_token]


def sign(body: bytes, secret: str = CHANNEL_SECRET) -> dict[str, str]:
    return {SIGNATURE_HEADER: compute_signature(secret, body)}


def post_envelope(client, events: list[dict], secret: str = CHANNEL_SECRET):
    body = json.dumps({"destination": "bot-1", "events": events}).encode("utf-8")
    return client.post("/webhook", content=body, headers=sign(body, secret))


def image_event(message_id: str, user_id: str = "U-farmer", group_id: str | None = "G1",
                reply_token: str | None = None) -> dict:
    source: dict = {"type": "group" if group_id else "user", "userId": user_id}
    if group_id:
        source["groupId"] = group_id
    return {
        "type": "message",
        "timestamp": int(time.time() * 1000),
        "source": source,
        "replyToken": reply_token or f"token-{message_id}",
        "message": {"id": message_id, "type": "image"},
    }


def text_event(message_id: str, text: str, user_id: str = "U-farmer",
               group_id: str | None = "G1", reply_token: str | None = None) -> dict:
    event = image_event(message_id, user_id, group_id, reply_token)
    event["message"] = {"id": message_id, "type": "text", "text": text}
    return event


def wait_until(predicate, timeout_s: float = 10.0, interval_s: float = 0.01):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval_s)
    raise AssertionError("condition not met in time")


def leaf_scene(registry=None) -> tuple[bytes, tuple]:
    """One blast patch and one blight patch on a neutral background."""
    registry = registry or default_registry()
    return synth_image(
        [
            (BoundingBox(20, 30, 120, 130), "blast"),
            (BoundingBox(160, 40, 260, 150), "blight"),
        ],
        width=320,
        height=240,
        registry=registry,
    )


def empty_scene() -> bytes:
    data, _ = synth_image([], width=320, height=240)
    return data


@pytest.fixture
def fake_platform():
    return FakePlatform()


@pytest.fixture
def gateway(tmp_path, fake_platform):
    """A running gateway on a synthetic detector and a fake platform."""
    config = GatewayConfig(
        channel_secret=CHANNEL_SECRET,
        platform_base_url="http://platform.invalid",
        public_base_url="http://bot.invalid",
        data_dir=tmp_path / "data",
        backend_kind="mock_synthetic",
        specialists=("U-spec",),
        admins=("U-admin",),
        workers=2,
    )
    store = Store(config.database_path)
    backend = SyntheticBackend(synthetic_config())
    app = create_app(config, store=store, backend=backend, platform=fake_platform)
    with TestClient(app) as client:
        yield SimpleNamespace(
            client=client,
            store=store,
            platform=fake_platform,
            config=config,
            app=app,
            service=app.state.service,
        )
    store.close()
