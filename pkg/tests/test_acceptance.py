"""Acceptance checks for the shipped guarantees.

Each test exercises one user-visible promise end to end, enforces its own
wall-clock budget, and prints a PASS line (visible under pytest -s) so a
release run reads as a checklist.
"""

import itertools
import json
import random
import time

import pytest

import reference_eval
from conftest import (
    CHANNEL_SECRET,
    FakePlatform,
    empty_scene,
    image_event,
    post_envelope,
    sign,
    text_event,
    wait_until,
)
from fastapi.testclient import TestClient
from paddybot import dataset, metrics
from paddybot.dataset import DatasetManifest, ManifestEntry
from paddybot.detector import SyntheticBackend, synth_image, synthetic_config
from paddybot.domain import (
    BoundingBox,
    GroundTruthBox,
    ImageRef,
    content_hash,
    default_registry,
)
from paddybot.gateway import create_app
from paddybot.gateway.config import GatewayConfig
from paddybot.store import Store
from test_metrics import _random_scene

CLASS_NAMES = ("blast", "blight", "bsp", "nbs", "streak")


def finish(label: str, started: float, budget_s: float) -> None:
    elapsed = time.perf_counter() - started
    assert elapsed < budget_s, f"{label} took {elapsed:.2f}s, budget {budget_s}s"
    print(f"PASS: {label} ({elapsed:.2f}s)")


# -- scoring arithmetic ------------------------------------------------------


class TestFieldTrialArithmetic:
    """The per-class accuracy table from a season of verified chat verdicts."""

    EXPECTED = {
        "blast": (182, 146.0, 80.22),
        "blight": (191, 162.0, 84.82),
        "bsp": (346, 235.0, 67.92),
        "nbs": (122, 116.5, 95.49),
        "streak": (27, 25.0, 92.59),
    }
    EXPECTED_TOTAL = (868, 684.5, 78.86)

    def build_samples(self):
        """Reconstruct a verdict log with the same right/wrong composition."""
        wrong_for = {
            "blast": "blight",
            "blight": "bsp",
            "bsp": "nbs",
            "nbs": "streak",
            "streak": "blast",
        }
        samples = []
        for name, (images, points, _) in self.EXPECTED.items():
            hits = int(points)
            mixed = 1 if points != hits else 0  # one two-class reply, half credit
            misses = images - hits - mixed
            samples += [({name}, {name})] * hits
            if mixed:
                samples.append(({name}, {name, wrong_for[name]}))
            samples += [({name}, {wrong_for[name]})] * misses
        return samples

    def test_accuracy_table(self):
        started = time.perf_counter()
        report = metrics.atp_report(self.build_samples())
        for name, (images, points, percent) in self.EXPECTED.items():
            row = report.per_class[name]
            assert row.image_count == images
            assert row.point_sum == pytest.approx(points, abs=1e-9)
            assert row.percent == pytest.approx(percent, abs=0.01)
        total = report.total
        assert total.image_count == self.EXPECTED_TOTAL[0]
        assert total.point_sum == pytest.approx(self.EXPECTED_TOTAL[1], abs=1e-9)
        assert total.percent == pytest.approx(self.EXPECTED_TOTAL[2], abs=0.01)
        finish("field-trial accuracy table reproduced within 0.01", started, 1.0)


class TestScoringRuleEnumeration:
    def test_every_class_combination(self):
        """Image score is hits over replies, for one- and two-disease truths
        against every possible reply subset of the five classes."""
        started = time.perf_counter()
        gt_sets = [
            set(combo)
            for size in (1, 2)
            for combo in itertools.combinations(CLASS_NAMES, size)
        ]
        pred_sets = [
            {CLASS_NAMES[i] for i in range(5) if mask >> i & 1} for mask in range(32)
        ]
        checked = 0
        for gt in gt_sets:
            for pred in pred_sets:
                hits = len(pred & gt)
                extras = len(pred - gt)
                expected = hits / (hits + extras) if pred else 0.0
                assert metrics.atp_image_point(gt, pred) == pytest.approx(
                    expected, abs=1e-12
                )
                checked += 1
        assert checked == 15 * 32
        finish(
            "image scoring rule verified over all 480 truth/reply subset pairs",
            started,
            1.0,
        )


# -- dataset bookkeeping -----------------------------------------------------


SIX_CLASS_BOXES = {
    "blast": (873, 217),
    "blight": (881, 214),
    "bsp": (873, 216),
    "nbs": (874, 214),
    "streak": (874, 215),
    "rrsv": (873, 214),
}
SIX_CLASS_IMAGES = {
    "blast": (805, 200),
    "blight": (866, 205),
    "bsp": (513, 131),
    "nbs": (822, 183),
    "streak": (829, 204),
    "rrsv": (682, 170),
}
FIVE_CLASS_BOXES = {
    "blast": (1622, 351),
    "blight": (1641, 351),
    "bsp": (1606, 352),
    "nbs": (1642, 351),
    "streak": (1604, 351),
}
FIVE_CLASS_IMAGES = {
    "blast": (1490, 331),
    "blight": (1583, 325),
    "bsp": (1213, 253),
    "nbs": (1433, 318),
    "streak": (1494, 327),
}


def build_collection(boxes_table, images_table, tag):
    """Single-class images hitting exact per-split box and image counts:
    (boxes - images) of a split's images carry two boxes, the rest one."""
    registry = default_registry()
    entries = []
    for name in boxes_table:
        cls = registry.ensure(name)
        for split, box_count, image_count in (
            ("train", boxes_table[name][0], images_table[name][0]),
            ("validate", boxes_table[name][1], images_table[name][1]),
        ):
            doubled = box_count - image_count
            assert 0 <= doubled <= image_count
            for index in range(image_count):
                image_id = f"{tag}-{name}-{split}-{index:04d}"
                labels = [GroundTruthBox(BoundingBox(0, 0, 10, 10), cls)]
                if index < doubled:
                    labels.append(GroundTruthBox(BoundingBox(12, 0, 22, 10), cls))
                entries.append(
                    ManifestEntry(
                        image=ImageRef(
                            id=image_id,
                            content_hash=content_hash(image_id.encode()),
                            width=640,
                            height=480,
                            storage_path=f"images/{image_id}.png",
                        ),
                        labels=tuple(labels),
                        split=split,
                    )
                )
    return DatasetManifest(entries=entries, registry=registry)


def check_audit(report, boxes_table, images_table):
    for name, (train, validate) in boxes_table.items():
        counts = report.per_class[name].boxes
        assert (counts["train"], counts["validate"]) == (train, validate)
    for name, (train, validate) in images_table.items():
        counts = report.per_class[name].images
        assert (counts["train"], counts["validate"]) == (train, validate)


class TestCollectionBookkeeping:
    def test_audit_refine_merge_reproduces_both_versions(self):
        started = time.perf_counter()
        first = build_collection(SIX_CLASS_BOXES, SIX_CLASS_IMAGES, "v1")
        report = dataset.audit(first)
        check_audit(report, SIX_CLASS_BOXES, SIX_CLASS_IMAGES)
        assert report.totals.boxes["train"] == 5248
        assert report.totals.boxes["validate"] == 1290
        assert report.totals.images["train"] == 4517
        assert report.totals.images["validate"] == 1093
        box_pct = report.box_percentages()
        assert box_pct["train"] == pytest.approx(80.27, abs=0.01)
        assert box_pct["validate"] == pytest.approx(19.73, abs=0.01)

        # drop the class that never occurred in the field
        trimmed = dataset.remove_class(first, "rrsv")
        trimmed_report = dataset.audit(trimmed)
        assert "rrsv" not in trimmed_report.per_class
        assert sum(trimmed_report.totals.boxes.values()) == 5451
        assert sum(trimmed_report.totals.images.values()) == 4758

        # fold in the second collection round and land on the larger version
        delta_boxes = {
            name: (
                FIVE_CLASS_BOXES[name][0] - SIX_CLASS_BOXES[name][0],
                FIVE_CLASS_BOXES[name][1] - SIX_CLASS_BOXES[name][1],
            )
            for name in CLASS_NAMES
        }
        delta_images = {
            name: (
                FIVE_CLASS_IMAGES[name][0] - SIX_CLASS_IMAGES[name][0],
                FIVE_CLASS_IMAGES[name][1] - SIX_CLASS_IMAGES[name][1],
            )
            for name in CLASS_NAMES
        }
        addition = build_collection(delta_boxes, delta_images, "v2add")
        merged = dataset.merge(trimmed, addition)
        assert merged.duplicates == ()

        # merged entries arrive unassigned, so compare split-independent sums
        merged_report = dataset.audit(merged.manifest)
        assert sum(merged_report.totals.boxes.values()) == 9871
        assert sum(merged_report.totals.images.values()) == 8767
        for name in CLASS_NAMES:
            assert sum(merged_report.per_class[name].boxes.values()) == sum(
                FIVE_CLASS_BOXES[name]
            )
            assert sum(merged_report.per_class[name].images.values()) == sum(
                FIVE_CLASS_IMAGES[name]
            )

        # the published split layout of the enlarged version
        second = build_collection(FIVE_CLASS_BOXES, FIVE_CLASS_IMAGES, "v2")
        second_report = dataset.audit(second)
        check_audit(second_report, FIVE_CLASS_BOXES, FIVE_CLASS_IMAGES)
        second_pct = second_report.box_percentages()
        assert second_pct["train"] == pytest.approx(82.21, abs=0.01)
        assert second_pct["validate"] == pytest.approx(17.79, abs=0.01)
        finish(
            "collection audit reproduces both dataset versions, the 5451/4758"
            " intermediate, and the merged 9871/8767 totals",
            started,
            5.0,
        )


# -- evaluator parity --------------------------------------------------------


class TestEvaluatorParity:
    def small_instance(self, rng, classes):
        """A random evaluation problem: at most 5 images, at most 6 labeled
        boxes for any one class."""
        while True:
            predictions, ground_truths = _random_scene(
                rng,
                image_count=rng.randint(1, 5),
                classes=classes,
                max_gt=3,
                max_det=4,
            )
            if not ground_truths:
                continue
            per_class = {}
            for boxes in ground_truths.values():
                for gt in boxes:
                    per_class[gt.cls.name] = per_class.get(gt.cls.name, 0) + 1
            if max(per_class.values()) <= 6:
                return predictions, ground_truths

    def test_matches_independent_reimplementation(self):
        started = time.perf_counter()
        rng = random.Random(20260819)
        classes = tuple(default_registry())
        instances = 0
        while instances < 200:
            predictions, ground_truths = self.small_instance(rng, classes)
            for mode in metrics.AP_MODES:
                report = metrics.map_report(predictions, ground_truths, mode=mode)
                ref_per_class, ref_mean = reference_eval.reference_map(
                    predictions, ground_truths, mode=mode
                )
                assert set(report.per_class_ap) == set(ref_per_class)
                for name, expected in ref_per_class.items():
                    assert report.per_class_ap[name] == pytest.approx(
                        expected, abs=1e-9
                    )
                    _, tp, fp, fn = reference_eval.reference_class_eval(
                        predictions, ground_truths, name, mode=mode
                    )
                    assert report.per_class_counts[name] == (tp, fp, fn)
                assert report.mean_ap == pytest.approx(ref_mean, abs=1e-9)
            instances += 1
        finish(
            f"detection AP and tp/fp/fn match the independent evaluator on"
            f" {instances} random instances in both AP modes",
            started,
            30.0,
        )


class TestGeometryOracle:
    def test_properties_and_pixel_counting_on_1000_pairs(self):
        started = time.perf_counter()
        rng = random.Random(404)
        shift = lambda box, dx, dy: BoundingBox(
            box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy
        )
        for index in range(1000):
            ax = rng.randrange(0, 100)
            ay = rng.randrange(0, 100)
            a = (ax, ay, ax + rng.randrange(1, 80), ay + rng.randrange(1, 80))
            if index % 5 == 0:
                bx, by = rng.randrange(0, 100), rng.randrange(0, 100)
            else:
                bx = max(0, ax + rng.randrange(-20, 21))
                by = max(0, ay + rng.randrange(-20, 21))
            b = (bx, by, bx + rng.randrange(1, 80), by + rng.randrange(1, 80))
            box_a, box_b = BoundingBox(*a), BoundingBox(*b)
            value = metrics.iou(box_a, box_b)
            assert value == pytest.approx(reference_eval.pixel_iou(a, b), abs=1e-6)
            assert metrics.iou(box_b, box_a) == value
            assert metrics.iou(box_a, box_a) == 1.0
            assert metrics.iou(shift(box_a, 7, 11), shift(box_b, 7, 11)) == pytest.approx(
                value, abs=1e-12
            )
        disjoint = metrics.iou(BoundingBox(0, 0, 10, 10), BoundingBox(10, 0, 20, 10))
        assert disjoint == 0.0
        finish(
            "overlap ratio matches pixel counting on 1000 random pairs and"
            " holds symmetry, identity, and translation invariance",
            started,
            5.0,
        )


# -- live chat round trip ----------------------------------------------------


POSITIONS = (
    BoundingBox(20, 30, 110, 120),
    BoundingBox(150, 40, 260, 140),
    BoundingBox(30, 140, 120, 220),
)

SCENES = (
    ("blast",),
    ("blight",),
    ("bsp",),
    ("nbs",),
    ("streak",),
    ("blast", "blight"),
    ("bsp", "nbs"),
    ("streak", "blast"),
    ("blight", "bsp"),
    ("nbs", "streak"),
    ("blast", "bsp", "nbs"),
    ("blight", "streak"),
)


def scene_bytes(classes):
    boxes = [(POSITIONS[i], name) for i, name in enumerate(classes)]
    data, _ = synth_image(boxes, width=320, height=240)
    return data


class TestChatRoundTrip:
    def test_diagnose_reply_verify_report(self, gateway):
        started = time.perf_counter()
        for index, classes in enumerate(SCENES):
            gateway.platform.add_content(f"m{index}", scene_bytes(classes))
            response = post_envelope(gateway.client, [image_event(f"m{index}")])
            assert response.status_code == 200
        for index in range(2):
            gateway.platform.add_content(f"blank{index}", empty_scene())
            response = post_envelope(gateway.client, [image_event(f"blank{index}")])
            assert response.status_code == 200

        def all_settled():
            done = gateway.store.list_jobs(status="done")
            silent = gateway.store.list_jobs(status="skipped_no_reply")
            if len(done) == len(SCENES) and len(silent) == 2:
                return done + silent
            return None

        jobs = wait_until(all_settled, timeout_s=30.0)
        by_message = {job.message_id: job for job in jobs}

        for index, classes in enumerate(SCENES):
            job = by_message[f"m{index}"]
            assert job.predicted_class_names == frozenset(classes)
            assert job.start_ms is not None and job.end_ms is not None
            assert job.end_ms >= job.start_ms
            assert job.duration_ms >= job.prediction["backend_latency_ms"]
            bundles = gateway.platform.replies_for(f"token-m{index}")
            assert len(bundles) == 1, "exactly one reply per disease photo"
            image_msg, text_msg = bundles[0]
            assert image_msg["type"] == "image"
            assert "/content/" in image_msg["originalContentUrl"]
            for name in classes:
                assert f"Detected: {name}" in text_msg["text"]

        for index in range(2):
            job = by_message[f"blank{index}"]
            assert job.status == "skipped_no_reply"
            assert gateway.platform.replies_for(f"token-blank{index}") == []

        for index in range(len(SCENES)):
            job = by_message[f"m{index}"]
            confirm = text_event(f"c{index}", f"/confirm {job.short_ref}", user_id="U-spec")
            assert post_envelope(gateway.client, [confirm]).json()["accepted"] == 1

        report = gateway.client.get("/reports/deployment-atp").json()
        assert report["sample_count"] == len(SCENES)
        assert report["total"]["percent"] == 100.0
        assert {row["class_name"] for row in report["rows"]} == set(CLASS_NAMES)
        latency = gateway.client.get("/reports/latency").json()
        assert latency["count"] == len(SCENES) + 2
        assert latency["p95_ms"] < 500.0
        finish(
            f"chat round trip: {len(SCENES)} photos diagnosed and verified at"
            " 100%, blanks stayed silent, p95 latency under 500 ms",
            started,
            60.0,
        )


class SlowBackend:
    """Wraps the synthetic detector with a fixed processing delay."""

    def __init__(self, inner, delay_s):
        self.inner = inner
        self.delay_s = delay_s
        self.model_version = inner.model_version

    def detect(self, request):
        time.sleep(self.delay_s)
        return self.inner.detect(request)


class TestWebhookResponsiveness:
    def test_ack_is_immediate_while_detection_is_slow(self, tmp_path):
        started = time.perf_counter()
        config = GatewayConfig(
            channel_secret=CHANNEL_SECRET,
            data_dir=tmp_path / "data",
            backend_kind="mock_synthetic",
            workers=2,
        )
        store = Store(config.database_path)
        platform = FakePlatform()
        backend = SlowBackend(SyntheticBackend(synthetic_config()), delay_s=0.8)
        app = create_app(config, store=store, backend=backend, platform=platform)
        with TestClient(app) as client:
            ack_times = []
            for index in range(3):
                platform.add_content(f"s{index}", scene_bytes(("blast",)))
                posted = time.perf_counter()
                response = post_envelope(client, [image_event(f"s{index}")])
                ack_times.append(time.perf_counter() - posted)
                assert response.status_code == 200
            assert max(ack_times) < 0.5
            wait_until(
                lambda: len(store.list_jobs(status="done")) == 3, timeout_s=20.0
            )
        store.close()
        finish(
            f"webhook acknowledgment stayed under 500 ms (worst"
            f" {max(ack_times) * 1000:.0f} ms) while detection took 800 ms",
            started,
            60.0,
        )


# -- replay and restart safety -------------------------------------------------


class TestReplayAndRestart:
    def test_thousand_event_replay_and_mid_queue_restart(self, tmp_path):
        started = time.perf_counter()
        config = GatewayConfig(
            channel_secret=CHANNEL_SECRET,
            data_dir=tmp_path / "data",
            backend_kind="mock_synthetic",
            specialists=("U-spec",),
            queue_limit=1000,
            workers=4,
        )
        platform = FakePlatform()
        scenes = [scene_bytes((name,)) for name in CLASS_NAMES]

        image_events = []
        for index in range(250):
            message_id = f"p{index:04d}"
            platform.add_content(message_id, scenes[index % len(scenes)])
            image_events.append(image_event(message_id))
        text_events = [
            text_event(f"v{ref:04d}", f"/confirm J{ref}", user_id="U-spec")
            for ref in range(1, 101)
        ] + [
            text_event(f"x{index:04d}", f"update {index} from the field")
            for index in range(650)
        ]

        def envelopes(events):
            return [
                json.dumps(
                    {"destination": "bot-1", "events": events[offset:offset + 25]}
                ).encode("utf-8")
                for offset in range(0, len(events), 25)
            ]

        image_bodies = envelopes(image_events)
        text_bodies = envelopes(text_events)

        store = Store(config.database_path)
        backend = SyntheticBackend(synthetic_config())
        app = create_app(config, store=store, backend=backend, platform=platform)
        with TestClient(app) as client:
            for body in image_bodies:
                assert client.post("/webhook", content=body, headers=sign(body)).status_code == 200
            wait_until(
                lambda: len(store.list_jobs(status="done")) == 250, timeout_s=45.0
            )
            for body in text_bodies:
                assert client.post("/webhook", content=body, headers=sign(body)).status_code == 200

            assert len(store.list_jobs()) == 250
            assert len(store.list_feedback()) == 100

            # replay every envelope verbatim: nothing may change
            for body in image_bodies + text_bodies:
                ack = client.post("/webhook", content=body, headers=sign(body)).json()
                assert ack["accepted"] == 0
                assert ack["duplicates"] == 25
            assert len(store.list_jobs()) == 250
            assert len(store.list_feedback()) == 100
            reply_count = len(platform.replies)
        store.close()

        # crash with work in flight: acknowledged jobs sit queued or running
        store = Store(config.database_path)
        for index in range(30):
            message_id = f"q{index:04d}"
            platform.add_content(message_id, scenes[index % len(scenes)])
            job = store.create_job(
                "U-farmer", group_id="G1", message_id=message_id,
                reply_token=f"token-{message_id}",
            )
            if index < 2:
                store.transition_job(job.job_id, "running")
        store.close()

        # restart on the same database and data directory
        store = Store(config.database_path)
        app = create_app(config, store=store, backend=backend, platform=platform)
        with TestClient(app) as client:
            assert client.get("/healthz").json()["status"] == "ok"
            wait_until(
                lambda: len(store.list_jobs(status="done")) == 280, timeout_s=30.0
            )
            assert store.pending_jobs() == []
            for index in range(30):
                assert len(platform.replies_for(f"token-q{index:04d}")) == 1

            assert len(store.list_jobs()) == 280
            assert len(store.list_feedback()) == 100
            assert len(platform.replies) == reply_count + 30

            platform.add_content("p-new", scenes[0])
            body = json.dumps(
                {"destination": "bot-1", "events": [image_event("p-new")]}
            ).encode("utf-8")
            assert client.post("/webhook", content=body, headers=sign(body)).json()["accepted"] == 1
            wait_until(
                lambda: store.find_job_by_message("p-new").status == "done",
                timeout_s=20.0,
            )
            report = client.get("/reports/deployment-atp").json()
            assert report["sample_count"] == 100
            assert report["total"]["percent"] == 100.0
        store.close()
        finish(
            "1000-event intake replayed verbatim with zero duplicate jobs, and"
            " a mid-queue restart finished every acknowledged job",
            started,
            60.0,
        )
