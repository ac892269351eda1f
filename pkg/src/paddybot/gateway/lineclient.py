"""Outbound HTTP client for the messaging platform.

Two calls matter: fetching the binary content of an uploaded message, and
answering with a reply token. Both follow the platform's v1 message API.
"""

from __future__ import annotations

import httpx


class PlatformError(Exception):
    pass


class PlatformClient:
    def __init__(
        self,
        base_url: str,
        channel_token: str = "",
        timeout_s: float = 10.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self._headers = {}
        if channel_token:
            self._headers["Authorization"] = f"Bearer {channel_token}"
        self._client = client or httpx.Client(timeout=timeout_s)

    def close(self) -> None:
        self._client.close()

    def fetch_content(self, message_id: str) -> tuple[bytes, str]:
        """Download the bytes behind a message id. Returns (data, content type)."""
        url = f"{self.base_url}/v1/message/{message_id}/content"
        try:
            response = self._client.get(url, headers=self._headers)
        except httpx.HTTPError as exc:
            raise PlatformError(f"content fetch failed: {exc}") from exc
        if response.status_code != 200:
            raise PlatformError(
                f"content fetch for {message_id!r} returned {response.status_code}"
            )
        content_type = response.headers.get("content-type", "application/octet-stream")
        return response.content, content_type

    def reply(self, reply_token: str, messages: list[dict]) -> list[str]:
        """Send a reply bundle. Returns the platform's ids for the sent messages."""
        url = f"{self.base_url}/v1/message/reply"
        payload = {"replyToken": reply_token, "messages": messages}
        try:
            response = self._client.post(url, json=payload, headers=self._headers)
        except httpx.HTTPError as exc:
            raise PlatformError(f"reply failed: {exc}") from exc
        if response.status_code != 200:
            raise PlatformError(f"reply returned {response.status_code}: {response.text}")
        try:
            body = response.json()
        except ValueError:
            return []
        sent = body.get("sentMessages", [])
        return [str(item.get("id", "")) for item in sent if isinstance(item, dict)]


def image_message(original_url: str, preview_url: str) -> dict:
    return {
        "type": "image",
        "originalContentUrl": original_url,
        "previewImageUrl": preview_url,
    }


def text_message(text: str) -> dict:
    return {"type": "text", "text": text}
