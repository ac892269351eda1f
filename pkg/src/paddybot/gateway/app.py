"""HTTP surface of the chat gateway.

POST /webhook takes signed platform envelopes and acknowledges immediately;
image messages become queued jobs, text messages may carry verdict commands.
GET /content/{token} and /content/{token}/preview serve annotated images by
their unguessable tokens. The report endpoints summarize the job log.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import logging
import re
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse
from pydantic import ValidationError

from ..store import DuplicateFeedback, Store, UnknownJob, now_ms
from .commands import Command, CommandError, parse_command
from .config import GatewayConfig
from .lineclient import PlatformClient, PlatformError, text_message
from .schemas import (
    AtpRowView,
    ClassScore,
    DeploymentAtpView,
    JobView,
    LatencyView,
    VerdictView,
    WebhookAck,
    WebhookEnvelope,
    WebhookEvent,
)
from .service import GatewayService

log = logging.getLogger("paddybot.gateway")

_TOKEN = re.compile(r"^[0-9a-f]{32}$")
_JOB_REF = re.compile(r"^[Jj]?(\d+)$")

SIGNATURE_HEADER = "X-Line-Signature"

# Redeliveries arrive within minutes; a day of message ids is ample.
DEDUPE_WINDOW_MS = 24 * 60 * 60 * 1000
_PRUNE_EVERY = 256


def compute_signature(secret: str, body: bytes) -> str:
    digest = hmac.new(secret.encode("utf-8"), body, hashlib.sha256).digest()
    return base64.b64encode(digest).decode("ascii")


def signature_valid(secret: str, body: bytes, signature: str | None) -> bool:
    if not signature:
        return False
    return hmac.compare_digest(compute_signature(secret, body), signature)


def create_app(
    config: GatewayConfig,
    store: Store | None = None,
    backend=None,
    platform: PlatformClient | None = None,
) -> FastAPI:
    """Assemble the service. Tests inject their own store, backend, and
    platform client; production wiring builds them from the config."""
    store = store or Store(config.database_path)
    if backend is None:
        from ..detector import make_backend

        backend = make_backend(config.backend_config())
    platform = platform or PlatformClient(
        config.platform_base_url,
        channel_token=config.channel_token,
        timeout_s=config.request_timeout_s,
    )
    service = GatewayService(config, store, backend, platform)

    for user_id in config.specialists:
        store.upsert_user(user_id, role="specialist")
    for user_id in config.admins:
        store.upsert_user(user_id, role="admin")

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        store.prune_events(older_than_ms=now_ms() - DEDUPE_WINDOW_MS)
        service.start()
        resumed = service.resume_pending()
        if resumed:
            log.info("resumed %d interrupted jobs", resumed)
        yield
        service.stop()

    app = FastAPI(title="paddybot gateway", lifespan=lifespan)
    app.state.config = config
    app.state.store = store
    app.state.service = service
    app.state.platform = platform

    def verdict_allowed(user_id: str | None) -> bool:
        if not user_id:
            return False
        if user_id in config.specialists or user_id in config.admins:
            return True
        user = store.get_user(user_id)
        return user is not None and user.role in ("specialist", "admin")

    def answer(reply_token: str | None, text: str) -> None:
        if not reply_token:
            return
        try:
            platform.reply(reply_token, [text_message(text)])
        except PlatformError as exc:
            log.warning("command reply not delivered: %s", exc)

    def apply_verdict(command: Command, user_id: str) -> str:
        try:
            job = store.get_job_by_ref(command.ref)
        except UnknownJob:
            return f"Unknown job J{command.ref}."
        corrected = command.corrected_class
        if command.kind == "wrong_class" and corrected not in service.registry:
            known = ", ".join(service.registry.names)
            return f"Unknown class {corrected!r}. Known classes: {known}."
        try:
            store.record_feedback(
                job_id=job.job_id,
                specialist_id=user_id,
                verdict=command.kind,
                corrected_class=corrected,
            )
        except DuplicateFeedback:
            return f"Already recorded that verdict for {job.short_ref}."
        if command.kind == "confirm":
            return f"Recorded: {job.short_ref} confirmed."
        if command.kind == "not_disease":
            return f"Recorded: {job.short_ref} marked as not a target disease."
        return f"Recorded: {job.short_ref} corrected to {corrected}."

    def handle_text_event(event: WebhookEvent) -> bool:
        """Returns True when the event carried an actionable command."""
        message = event.message
        user_id = event.source.userId
        try:
            command = parse_command(message.text or "")
        except CommandError as exc:
            answer(event.replyToken, str(exc))
            return True
        if command is None:
            return False
        if not verdict_allowed(user_id):
            answer(event.replyToken, "Only registered specialists can record verdicts.")
            return True
        answer(event.replyToken, apply_verdict(command, user_id))
        return True

    webhook_count = 0

    @app.post("/webhook", response_model=WebhookAck)
    async def webhook(request: Request) -> WebhookAck:
        body = await request.body()
        signature = request.headers.get(SIGNATURE_HEADER)
        if not signature_valid(config.channel_secret, body, signature):
            raise HTTPException(status_code=401, detail="bad signature")
        nonlocal webhook_count
        webhook_count += 1
        if webhook_count % _PRUNE_EVERY == 0:
            store.prune_events(older_than_ms=now_ms() - DEDUPE_WINDOW_MS)
        try:
            envelope = WebhookEnvelope.model_validate_json(body)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        accepted = 0
        duplicates = 0
        for event in envelope.events:
            if event.type != "message" or event.message is None:
                continue
            fresh = store.append_event(
                message_id=event.message.id,
                event_type=event.type,
                message_type=event.message.type,
                user_id=event.source.userId,
                group_id=event.source.groupId,
                reply_token=event.replyToken,
                ts_ms=event.timestamp,
            )
            if not fresh:
                duplicates += 1
                continue
            if event.source.userId:
                store.upsert_user(event.source.userId)
            if event.message.type == "image":
                service.enqueue_image_job(
                    user_id=event.source.userId or "unknown",
                    group_id=event.source.groupId,
                    message_id=event.message.id,
                    reply_token=event.replyToken,
                )
                accepted += 1
            elif event.message.type == "text":
                if handle_text_event(event):
                    accepted += 1
        return WebhookAck(status="ok", accepted=accepted, duplicates=duplicates)

    def _annotation_path(token: str, preview: bool) -> Path:
        if not _TOKEN.match(token):
            raise HTTPException(status_code=404, detail="no such content")
        name = f"{token}_preview.png" if preview else f"{token}.png"
        path = Path(config.data_dir) / "annotated" / name
        if not path.is_file():
            raise HTTPException(status_code=404, detail="no such content")
        return path

    @app.get("/content/{token}")
    def content(token: str) -> FileResponse:
        return FileResponse(_annotation_path(token, preview=False), media_type="image/png")

    @app.get("/content/{token}/preview")
    def content_preview(token: str) -> FileResponse:
        return FileResponse(_annotation_path(token, preview=True), media_type="image/png")

    @app.get("/jobs/{ref}", response_model=JobView)
    def job_detail(ref: str) -> JobView:
        match = _JOB_REF.match(ref)
        if match is None:
            raise HTTPException(status_code=404, detail="no such job")
        try:
            job = store.get_job_by_ref(int(match.group(1)))
        except UnknownJob:
            raise HTTPException(status_code=404, detail="no such job") from None
        verdicts = [
            VerdictView(
                specialist_id=record.specialist_id,
                verdict=record.verdict,
                corrected_class=record.corrected_class,
            )
            for record in store.list_feedback(job.job_id)
        ]
        return JobView(
            job_ref=job.short_ref,
            status=job.status,
            user_id=job.user_id,
            group_id=job.group_id,
            created_ms=job.created_ms,
            duration_ms=job.duration_ms,
            replied_classes=[
                ClassScore(class_name=name, confidence=confidence)
                for name, confidence in job.replied_classes
            ],
            reply_message_ids=list(job.reply_message_ids),
            failure_reason=job.failure_reason,
            verdicts=verdicts,
        )

    @app.get("/reports/deployment-atp", response_model=DeploymentAtpView)
    def deployment_atp(
        since_ms: int | None = Query(default=None),
        until_ms: int | None = Query(default=None),
        verified_only: bool = Query(default=True),
    ) -> DeploymentAtpView:
        result = store.deployment_atp(
            since_ms=since_ms, until_ms=until_ms, verified_only=verified_only
        )
        rows = [
            AtpRowView(
                class_name=name,
                images=row.image_count,
                points=row.point_sum,
                percent=row.percent,
            )
            for name, row in sorted(result.report.per_class.items())
        ]
        total = AtpRowView(
            class_name="total",
            images=result.report.total.image_count,
            points=result.report.total.point_sum,
            percent=result.report.total.percent,
        )
        return DeploymentAtpView(
            rows=rows,
            total=total,
            sample_count=result.sample_count,
            excluded=result.excluded,
        )

    @app.get("/reports/latency", response_model=LatencyView)
    def latency(
        since_ms: int | None = Query(default=None),
        until_ms: int | None = Query(default=None),
    ) -> LatencyView:
        summary = store.latency_report(since_ms=since_ms, until_ms=until_ms)
        return LatencyView(
            count=summary.count,
            min_ms=summary.min_ms,
            median_ms=summary.median_ms,
            p95_ms=summary.p95_ms,
            max_ms=summary.max_ms,
        )

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "queue_depth": service.queue_depth}

    return app
