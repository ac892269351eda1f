"""Background inference pipeline.

The webhook handler only persists a queued job and returns; worker threads
do the slow part: fetch the image from the platform, run the detector,
draw the annotated copy, send the reply, and record every step. A job that
fails at any stage lands in the failed state with a reason instead of
taking the service down.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from pathlib import Path
from typing import Iterable, Sequence

from ..detector import (
    DetectionRequest,
    DetectionResponse,
    decode_image,
    render_annotation,
    render_preview,
)
from ..domain import ClassRegistry, Detection, ImageRef, content_hash, default_registry
from ..store import JobRecord, Store, StoreError, now_ms
from .config import DEFAULT_REPLY_TEMPLATE, GatewayConfig
from .lineclient import PlatformClient, PlatformError, image_message, text_message

log = logging.getLogger("paddybot.gateway")

_STOP = object()

_EXTENSIONS = {"image/png": ".png", "image/jpeg": ".jpg", "image/webp": ".webp"}

VERBOSE_NO_REPLY_TEXT = "No target disease found."


def surviving_detections(
    detections: Iterable[Detection], threshold: float
) -> tuple[Detection, ...]:
    """Keep detections at or above the reply threshold."""
    return tuple(d for d in detections if d.confidence >= threshold)


def summarize_classes(detections: Iterable[Detection]) -> list[tuple[str, float]]:
    """Collapse detections to one (class, best confidence) row per class,
    strongest first; name breaks ties so the order is reproducible."""
    best: dict[str, float] = {}
    for det in detections:
        name = det.cls.name
        if name not in best or det.confidence > best[name]:
            best[name] = det.confidence
    return sorted(best.items(), key=lambda item: (-item[1], item[0]))


def reply_text(
    job_ref: str,
    summary: Sequence[tuple[str, float]],
    template: str = DEFAULT_REPLY_TEMPLATE,
) -> str:
    """Render the diagnosis text. The template's first line repeats per
    class ({class}, {confidence}); any remaining lines render once and may
    reference {job_ref}, so localized wording needs no code change."""
    head, _, tail = template.partition("\n")
    lines = [
        head.format_map({"class": name, "confidence": f"{confidence:.2f}", "job_ref": job_ref})
        for name, confidence in summary
    ]
    if tail:
        lines.append(tail.format_map({"job_ref": job_ref}))
    return "\n".join(lines)


def prediction_payload(response: DetectionResponse) -> dict:
    return {
        "model_version": response.model_version,
        "backend_latency_ms": response.backend_latency_ms,
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
            for det in response.detections
        ],
    }


class GatewayService:
    """Owns the job queue and its worker threads."""

    def __init__(
        self,
        config: GatewayConfig,
        store: Store,
        backend,
        platform: PlatformClient,
        registry: ClassRegistry | None = None,
    ) -> None:
        self.config = config
        self.store = store
        self.backend = backend
        self.platform = platform
        self.registry = registry or default_registry()
        self._queue: queue.Queue = queue.Queue(maxsize=config.queue_limit)
        self._workers: list[threading.Thread] = []
        self._started = False

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        (Path(self.config.data_dir) / "raw").mkdir(parents=True, exist_ok=True)
        (Path(self.config.data_dir) / "annotated").mkdir(parents=True, exist_ok=True)
        for index in range(self.config.workers):
            worker = threading.Thread(
                target=self._worker_loop, name=f"paddybot-worker-{index}", daemon=True
            )
            worker.start()
            self._workers.append(worker)

    def stop(self, timeout_s: float = 10.0) -> None:
        if not self._started:
            return
        for _ in self._workers:
            self._queue.put(_STOP)
        deadline = time.monotonic() + timeout_s
        for worker in self._workers:
            worker.join(max(0.0, deadline - time.monotonic()))
        self._workers.clear()
        self._started = False

    def resume_pending(self) -> int:
        """Requeue jobs interrupted by a restart. Call after start()."""
        pending = self.store.pending_jobs()
        for job in pending:
            self._queue.put(job.job_id)
        return len(pending)

    @property
    def queue_depth(self) -> int:
        return self._queue.qsize()

    # -- intake ---------------------------------------------------------------

    def enqueue_image_job(
        self,
        user_id: str,
        group_id: str | None,
        message_id: str,
        reply_token: str | None,
    ) -> JobRecord:
        job = self.store.create_job(
            user_id=user_id,
            group_id=group_id,
            message_id=message_id,
            reply_token=reply_token,
        )
        try:
            self._queue.put_nowait(job.job_id)
        except queue.Full:
            return self.store.transition_job(
                job.job_id, "failed", failure_reason="queue full"
            )
        return job

    # -- pipeline ---------------------------------------------------------------

    def _worker_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is _STOP:
                return
            try:
                self.process_job(item)
            except Exception:
                log.exception("unhandled error processing job %s", item)

    def process_job(self, job_id: str) -> JobRecord:
        """Run one job to a terminal state. Safe to call again on a settled
        job: it returns the record untouched."""
        job = self.store.get_job(job_id)
        if job.status not in ("queued", "running"):
            return job
        try:
            if job.status == "queued":
                job = self.store.transition_job(job_id, "running", start_ms=now_ms())
            return self._run_pipeline(job)
        except Exception as exc:
            log.warning("job %s failed: %s", job_id, exc)
            try:
                return self.store.transition_job(
                    job_id,
                    "failed",
                    end_ms=now_ms(),
                    failure_reason=f"{type(exc).__name__}: {exc}",
                )
            except StoreError:
                return self.store.get_job(job_id)

    def _run_pipeline(self, job: JobRecord) -> JobRecord:
        started = time.perf_counter()
        data, content_type = self.platform.fetch_content(job.message_id)
        image = decode_image(data)
        ref = self._persist_raw(job, data, content_type, image.size)
        self.store.attach_image(job.job_id, ref)

        response = self.backend.detect(
            DetectionRequest(
                image_bytes=data,
                content_type=content_type,
                request_id=job.job_id,
                deadline_s=self.config.request_timeout_s,
            )
        )
        survivors = surviving_detections(response.detections, self.config.reply_threshold)
        duration_ms = (time.perf_counter() - started) * 1000.0
        prediction = prediction_payload(response)

        if not survivors:
            # Nothing confident enough to report: stay silent in the chat
            # unless the operator turned on verbose replies for debugging.
            self.store.transition_job(
                job.job_id,
                "done",
                end_ms=now_ms(),
                duration_ms=duration_ms,
                prediction=prediction,
                replied_classes=[],
            )
            skipped = self.store.transition_job(job.job_id, "skipped_no_reply")
            if self.config.verbose_replies and job.reply_token:
                try:
                    sent_ids = self.platform.reply(
                        job.reply_token, [text_message(VERBOSE_NO_REPLY_TEXT)]
                    )
                except PlatformError as exc:
                    log.warning("verbose reply for job %s not delivered: %s", job.job_id, exc)
                    sent_ids = []
                return self.store.set_reply_message_ids(job.job_id, sent_ids)
            return skipped

        token = uuid.uuid4().hex
        annotated = render_annotation(data, survivors)
        self._persist_annotation(token, annotated)
        summary = summarize_classes(survivors)
        job = self.store.transition_job(
            job.job_id,
            "done",
            end_ms=now_ms(),
            duration_ms=duration_ms,
            prediction=prediction,
            replied_classes=summary,
            annotation_token=token,
        )
        return self._send_reply(job, summary, token)

    def _persist_raw(
        self, job: JobRecord, data: bytes, content_type: str, size: tuple[int, int]
    ) -> ImageRef:
        suffix = _EXTENSIONS.get(content_type.split(";")[0].strip(), ".bin")
        path = Path(self.config.data_dir) / "raw" / f"{job.job_id}{suffix}"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        return ImageRef(
            id=job.message_id or job.job_id,
            content_hash=content_hash(data),
            width=size[0],
            height=size[1],
            storage_path=str(path),
        )

    def _persist_annotation(self, token: str, annotated: bytes) -> None:
        directory = Path(self.config.data_dir) / "annotated"
        directory.mkdir(parents=True, exist_ok=True)
        (directory / f"{token}.png").write_bytes(annotated)
        (directory / f"{token}_preview.png").write_bytes(render_preview(annotated))

    def _send_reply(
        self, job: JobRecord, summary: Sequence[tuple[str, float]], token: str
    ) -> JobRecord:
        base = self.config.public_base_url.rstrip("/")
        original_url = f"{base}/content/{token}"
        preview_url = f"{base}/content/{token}/preview"
        messages = [
            image_message(original_url, preview_url),
            text_message(reply_text(job.short_ref, summary, self.config.reply_template)),
        ]
        try:
            sent_ids = self.platform.reply(job.reply_token, messages)
        except PlatformError as exc:
            # The diagnosis stands even if delivery failed; record the gap.
            log.warning("reply for job %s not delivered: %s", job.job_id, exc)
            sent_ids = []
        return self.store.set_reply_message_ids(job.job_id, sent_ids)
