"""Regenerate the simulator's committed fixtures.

Produces two things:

* ``images/``: deterministic sample photos for the chat UI and the scripted
  scenario, rendered with the same generator the backend test suite uses.
* ``envelopes.json``: canonical webhook bodies with their signatures and the
  acknowledgements a real gateway returns for them, first delivery and
  replay. The TypeScript contract tests assert that the simulator's envelope
  builder reproduces these bodies byte for byte and that its signer matches.

Run from this directory with the backend package installed:

    python3 generate_fixtures.py
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from paddybot.detector import SyntheticBackend, synth_image, synthetic_config
from paddybot.domain import BoundingBox
from paddybot.gateway.app import create_app
from paddybot.gateway.config import GatewayConfig
from paddybot.store import Store

HERE = Path(__file__).resolve().parent

CHANNEL_SECRET = "contract-fixture-secret"
DESTINATION = "sim-bot"
GROUP_ID = "G-sim"
FARMER = "U-farmer-1"
SPECIALIST = "U-specialist-1"
# Fixed stamp keeps the bodies, and so the signatures, reproducible.
STAMP_MS = 1755600000000


def build_source(user_id: str, group_id: str | None) -> dict:
    source: dict = {"type": "group" if group_id else "user", "userId": user_id}
    if group_id:
        source["groupId"] = group_id
    return source


def image_event(spec: dict) -> dict:
    return {
        "type": "message",
        "timestamp": spec["timestampMs"],
        "source": build_source(spec["userId"], spec.get("groupId")),
        "replyToken": spec["replyToken"],
        "message": {"id": spec["messageId"], "type": "image"},
    }


def text_event(spec: dict) -> dict:
    return {
        "type": "message",
        "timestamp": spec["timestampMs"],
        "source": build_source(spec["userId"], spec.get("groupId")),
        "replyToken": spec["replyToken"],
        "message": {"id": spec["messageId"], "type": "text", "text": spec["text"]},
    }


def envelope_body(destination: str, event_specs: list[dict]) -> str:
    events = [
        image_event(spec) if spec["kind"] == "image" else text_event(spec)
        for spec in event_specs
    ]
    payload = {"destination": destination, "events": events}
    return json.dumps(payload, separators=(",", ":"), ensure_ascii=False)


def sign(secret: str, body: str) -> str:
    digest = hmac.new(secret.encode("utf-8"), body.encode("utf-8"), hashlib.sha256)
    return base64.b64encode(digest.digest()).decode("ascii")


def event_spec(kind: str, message_id: str, user_id: str, **extra: object) -> dict:
    spec: dict = {
        "kind": kind,
        "messageId": message_id,
        "userId": user_id,
        "groupId": GROUP_ID,
        "replyToken": f"fx-rt-{message_id}",
        "timestampMs": STAMP_MS,
    }
    spec.update(extra)
    return spec


CASES: list[tuple[str, list[dict]]] = [
    ("image from farmer in group", [event_spec("image", "fx-img-1", FARMER)]),
    (
        "verdict command from specialist",
        [event_spec("text", "fx-txt-1", SPECIALIST, text="/confirm J1")],
    ),
    (
        "plain chatter in thai",
        [event_spec("text", "fx-txt-2", FARMER, text="สวัสดีครับ ข้าวแปลงนี้เป็นอะไรไหม")],
    ),
    (
        "image and command in one envelope",
        [
            event_spec("image", "fx-img-2", FARMER),
            event_spec("text", "fx-txt-3", SPECIALIST, text="/correct J2 blight"),
        ],
    ),
    ("empty envelope", []),
]


class StubPlatform:
    """Outbound stub: fixture events reference no fetchable content, and
    command replies just need a delivery id."""

    def fetch_content(self, message_id: str):
        from paddybot.gateway.lineclient import PlatformError

        raise PlatformError(f"no content behind {message_id!r}")

    def reply(self, reply_token: str, messages: list[dict]) -> list[str]:
        return [f"stub-{index + 1}" for index in range(len(messages))]

    def close(self) -> None:
        pass


def record_acks() -> list[dict]:
    cases = []
    with tempfile.TemporaryDirectory() as tmp:
        config = GatewayConfig(
            channel_secret=CHANNEL_SECRET,
            platform_base_url="http://platform.invalid",
            public_base_url="http://bot.invalid",
            data_dir=Path(tmp),
            backend_kind="mock_synthetic",
            specialists=(SPECIALIST,),
            workers=1,
        )
        store = Store(config.database_path)
        backend = SyntheticBackend(synthetic_config())
        app = create_app(config, store=store, backend=backend, platform=StubPlatform())
        with TestClient(app) as client:
            for name, specs in CASES:
                body = envelope_body(DESTINATION, specs)
                headers = {
                    "X-Line-Signature": sign(CHANNEL_SECRET, body),
                    "Content-Type": "application/json",
                }
                first = client.post("/webhook", content=body.encode("utf-8"), headers=headers)
                replay = client.post("/webhook", content=body.encode("utf-8"), headers=headers)
                assert first.status_code == 200, (name, first.text)
                assert replay.status_code == 200, (name, replay.text)
                cases.append(
                    {
                        "name": name,
                        "inputs": {"destination": DESTINATION, "events": specs},
                        "body": body,
                        "signature": sign(CHANNEL_SECRET, body),
                        "ack": first.json(),
                        "replayAck": replay.json(),
                    }
                )
        store.close()
    return cases


SAMPLES: dict[str, list[tuple[tuple[int, int, int, int], str]]] = {
    "paddy-blank": [],
    "paddy-blast": [((90, 70, 210, 170), "blast")],
    "paddy-blight": [((90, 70, 210, 170), "blight")],
    "paddy-bsp": [((90, 70, 210, 170), "bsp")],
    "paddy-mixed": [((20, 30, 120, 130), "blast"), ((180, 60, 300, 180), "blight")],
}


def render_samples() -> None:
    images = HERE / "images"
    images.mkdir(exist_ok=True)
    for name, scene in SAMPLES.items():
        spec = [(BoundingBox(*coords), cls) for coords, cls in scene]
        data, _ = synth_image(spec, width=320, height=240)
        (images / f"{name}.png").write_bytes(data)
        print(f"wrote images/{name}.png ({len(data)} bytes)")


def main() -> None:
    render_samples()
    fixture = {
        "channelSecret": CHANNEL_SECRET,
        "destination": DESTINATION,
        "cases": record_acks(),
    }
    out = HERE / "envelopes.json"
    out.write_text(json.dumps(fixture, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote envelopes.json ({len(fixture['cases'])} cases)")


if __name__ == "__main__":
    main()
