"""Request and response bodies for the chat webhook service.

Field names mirror the wire format of the messaging platform, so inbound
payloads bind without aliases.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class WebhookSource(BaseModel):
    type: str = "user"
    userId: str | None = None
    groupId: str | None = None


class WebhookMessage(BaseModel):
    id: str
    type: str
    text: str | None = None


class WebhookEvent(BaseModel):
    type: str
    timestamp: int = 0
    source: WebhookSource = Field(default_factory=WebhookSource)
    replyToken: str | None = None
    message: WebhookMessage | None = None


class WebhookEnvelope(BaseModel):
    destination: str = ""
    events: list[WebhookEvent] = Field(default_factory=list)


class WebhookAck(BaseModel):
    status: str = "ok"
    accepted: int = 0
    duplicates: int = 0


class ClassScore(BaseModel):
    class_name: str
    confidence: float


class VerdictView(BaseModel):
    specialist_id: str
    verdict: str
    corrected_class: str | None = None


class JobView(BaseModel):
    job_ref: str
    status: str
    user_id: str
    group_id: str | None = None
    created_ms: int
    duration_ms: float | None = None
    replied_classes: list[ClassScore] = Field(default_factory=list)
    reply_message_ids: list[str] = Field(default_factory=list)
    failure_reason: str | None = None
    verdicts: list[VerdictView] = Field(default_factory=list)


class AtpRowView(BaseModel):
    class_name: str
    images: int
    points: float
    percent: float


class DeploymentAtpView(BaseModel):
    rows: list[AtpRowView]
    total: AtpRowView
    sample_count: int
    excluded: dict[str, int]


class LatencyView(BaseModel):
    count: int
    min_ms: float | None = None
    median_ms: float | None = None
    p95_ms: float | None = None
    max_ms: float | None = None
