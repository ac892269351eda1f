"""Dataset manifest management and the data-side refinement workflow.

A manifest is a line-delimited JSON file of labeled images with split
assignments. Operations cover the refinement loop: audit counts, drop a
class, merge new material, stratified splitting, and turning specialist
chat corrections into annotation work items.
"""

from __future__ import annotations

import json
import random
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

from .domain import (
    BoundingBox,
    ClassRegistry,
    DomainError,
    GroundTruthBox,
    ImageRef,
    default_registry,
)

SPLITS = ("train", "validate", "test", "unassigned")
MANIFEST_VERSION = "1"


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path: str, line_no: int, reason: str) -> None:
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class DuplicateImage(DatasetError):
    pass


class InsufficientData(DatasetError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    """One image with its labels, split assignment and provenance tag.

    Entries produced from chat feedback carry the specialist's class names in
    ``pending_classes`` and no boxes until someone annotates them; every
    other entry must have at least one label.
    """

    image: ImageRef
    labels: tuple[GroundTruthBox, ...]
    split: str = "unassigned"
    source_tag: str = ""
    pending_classes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise DatasetError(f"unknown split {self.split!r}")
        if not self.labels and not self.pending_classes:
            raise DatasetError(
                f"entry {self.image.id!r} has neither labels nor pending classes"
            )

    @property
    def needs_annotation(self) -> bool:
        return bool(self.pending_classes) and not self.labels

    @property
    def label_classes(self) -> tuple[str, ...]:
        return tuple(sorted({gt.cls.name for gt in self.labels}))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    registry: ClassRegistry = field(default_factory=default_registry)
    version: str = MANIFEST_VERSION

    def __post_init__(self) -> None:
        seen_ids: set[str] = set()
        seen_hashes: dict[str, str] = {}
        for entry in self.entries:
            if entry.image.id in seen_ids:
                raise DuplicateImage(f"duplicate image id {entry.image.id!r}")
            seen_ids.add(entry.image.id)
            other = seen_hashes.get(entry.image.content_hash)
            if other is not None:
                raise DuplicateImage(
                    f"images {other!r} and {entry.image.id!r} share content hash "
                    f"{entry.image.content_hash}"
                )
            seen_hashes[entry.image.content_hash] = entry.image.id

    def __len__(self) -> int:
        return len(self.entries)

    def class_names(self) -> tuple[str, ...]:
        names: set[str] = set()
        for entry in self.entries:
            names.update(entry.label_classes)
            names.update(entry.pending_classes)
        return tuple(sorted(names))


@dataclass(frozen=True)
class SplitCounts:
    boxes: dict[str, int]
    images: dict[str, int]

    @property
    def total_boxes(self) -> int:
        return sum(self.boxes.values())

    @property
    def total_images(self) -> int:
        return sum(self.images.values())


@dataclass(frozen=True)
class AuditReport:
    """Per-class box/image counts by split, with totals and percentages.

    Multi-label images count once per class in the per-class image counts,
    so per-class image totals can exceed the number of distinct images.
    """

    per_class: dict[str, SplitCounts]
    totals: SplitCounts

    def box_percentages(self) -> dict[str, float]:
        total = self.totals.total_boxes
        if not total:
            return {s: 0.0 for s in SPLITS}
        return {s: 100.0 * self.totals.boxes[s] / total for s in SPLITS}

    def image_percentages(self) -> dict[str, float]:
        total = self.totals.total_images
        if not total:
            return {s: 0.0 for s in SPLITS}
        return {s: 100.0 * self.totals.images[s] / total for s in SPLITS}


@dataclass(frozen=True)
class MergeResult:
    manifest: DatasetManifest
    duplicates: tuple[str, ...]  # image ids from the addition that were rejected


@dataclass(frozen=True)
class ExportResult:
    manifest: DatasetManifest
    skipped: tuple[tuple[str, str], ...]  # (feedback id, reason)


def _coordinate(value: float) -> float | int:
    # Whole-number coordinates serialize as ints so a load/save cycle
    # reproduces the file byte for byte.
    as_float = float(value)
    return int(as_float) if as_float.is_integer() else as_float


def _entry_to_record(entry: ManifestEntry) -> dict:
    record = {
        "image_id": entry.image.id,
        "content_hash": entry.image.content_hash,
        "width": entry.image.width,
        "height": entry.image.height,
        "storage_path": entry.image.storage_path,
        "split": entry.split,
        "source_tag": entry.source_tag,
        "labels": [
            {
                "class": gt.cls.name,
                "x_min": _coordinate(gt.box.x_min),
                "y_min": _coordinate(gt.box.y_min),
                "x_max": _coordinate(gt.box.x_max),
                "y_max": _coordinate(gt.box.y_max),
            }
            for gt in entry.labels
        ],
    }
    if entry.pending_classes:
        record["pending_classes"] = list(entry.pending_classes)
    return record


def _record_to_entry(record: Mapping, registry: ClassRegistry) -> ManifestEntry:
    image = ImageRef(
        id=str(record["image_id"]),
        content_hash=str(record["content_hash"]),
        width=int(record["width"]),
        height=int(record["height"]),
        storage_path=str(record.get("storage_path", "")),
    )
    labels = []
    for label in record.get("labels", []):
        cls = registry.ensure(str(label["class"]))
        box = BoundingBox(
            float(label["x_min"]), float(label["y_min"]),
            float(label["x_max"]), float(label["y_max"]),
        )
        labels.append(GroundTruthBox(box=box, cls=cls))
    pending = tuple(registry.ensure(str(c)).name for c in record.get("pending_classes", []))
    return ManifestEntry(
        image=image,
        labels=tuple(labels),
        split=str(record.get("split", "unassigned")),
        source_tag=str(record.get("source_tag", "")),
        pending_classes=pending,
    )


def load_manifest(path: str | Path, registry: ClassRegistry | None = None) -> DatasetManifest:
    """Parse a line-delimited manifest file. Unknown classes are registered
    as they appear, keeping the stock five at ids 0-4."""
    path = Path(path)
    registry = registry or default_registry()
    entries: list[ManifestEntry] = []
    version = MANIFEST_VERSION
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), line_no, f"invalid JSON: {exc.msg}") from None
            if "manifest_version" in record and "image_id" not in record:
                version = str(record["manifest_version"])
                continue
            try:
                entries.append(_record_to_entry(record, registry))
            except (KeyError, TypeError) as exc:
                raise ParseError(str(path), line_no, f"missing field: {exc}") from None
            except (DomainError, DatasetError) as exc:
                raise ParseError(str(path), line_no, str(exc)) from None
    return DatasetManifest(entries=entries, registry=registry, version=version)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest as one JSON record per line, byte-stable."""
    path = Path(path)
    lines = [json.dumps({"manifest_version": manifest.version}, separators=(",", ":"))]
    lines.extend(
        json.dumps(_entry_to_record(entry), separators=(",", ":"))
        for entry in manifest.entries
    )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def audit(manifest: DatasetManifest) -> AuditReport:
    """Count label boxes and images per class per split."""
    per_class: dict[str, SplitCounts] = {}

    def counts_for(name: str) -> SplitCounts:
        if name not in per_class:
            per_class[name] = SplitCounts(
                boxes={s: 0 for s in SPLITS}, images={s: 0 for s in SPLITS}
            )
        return per_class[name]

    totals = SplitCounts(boxes={s: 0 for s in SPLITS}, images={s: 0 for s in SPLITS})
    for entry in manifest.entries:
        for gt in entry.labels:
            counts_for(gt.cls.name).boxes[entry.split] += 1
            totals.boxes[entry.split] += 1
        for name in entry.label_classes:
            counts_for(name).images[entry.split] += 1
        if entry.labels:
            totals.images[entry.split] += 1
    return AuditReport(per_class=dict(sorted(per_class.items())), totals=totals)


def remove_class(manifest: DatasetManifest, class_name: str) -> DatasetManifest:
    """Drop a class: entries labeled solely with it disappear, mixed entries
    keep their remaining labels."""
    cls = manifest.registry.lookup(class_name)
    entries: list[ManifestEntry] = []
    for entry in manifest.entries:
        if entry.needs_annotation:
            pending = tuple(c for c in entry.pending_classes if c != cls.name)
            if pending:
                entries.append(replace(entry, pending_classes=pending))
            continue
        kept = tuple(gt for gt in entry.labels if gt.cls != cls)
        if kept:
            entries.append(replace(entry, labels=kept))
    return DatasetManifest(entries=entries, registry=manifest.registry, version=manifest.version)


def merge(base: DatasetManifest, addition: DatasetManifest) -> MergeResult:
    """Union of two manifests. Additions whose content hash (or id) already
    exists in the base are rejected and listed, not fatal. Base split
    assignments are preserved; new entries come in unassigned."""
    registry = base.registry
    for name in addition.class_names():
        registry.ensure(name)

    known_hashes = {e.image.content_hash for e in base.entries}
    known_ids = {e.image.id for e in base.entries}
    entries = list(base.entries)
    duplicates: list[str] = []
    for entry in addition.entries:
        if entry.image.content_hash in known_hashes or entry.image.id in known_ids:
            duplicates.append(entry.image.id)
            continue
        known_hashes.add(entry.image.content_hash)
        known_ids.add(entry.image.id)
        entries.append(replace(entry, split="unassigned"))
    merged = DatasetManifest(entries=entries, registry=registry, version=base.version)
    return MergeResult(manifest=merged, duplicates=tuple(duplicates))


def split(
    manifest: DatasetManifest,
    train_fraction: float,
    validate_fraction: float,
    seed: int,
) -> DatasetManifest:
    """Deterministic stratified split.

    Entries are grouped by their label-class set and each group is shuffled
    with the seed, then cut train/validate/remainder-as-test. For
    single-class data this keeps every class's ratio within one image of the
    requested fractions.
    """
    if not 0.0 < train_fraction < 1.0 or not 0.0 < validate_fraction < 1.0:
        raise DatasetError("fractions must be in (0,1)")
    if train_fraction + validate_fraction > 1.0 + 1e-9:
        raise DatasetError("train and validate fractions must sum to at most 1")

    groups = 2 if train_fraction + validate_fraction > 1.0 - 1e-9 else 3

    strata: dict[tuple[str, ...], list[ManifestEntry]] = {}
    for entry in manifest.entries:
        key = entry.label_classes or entry.pending_classes
        strata.setdefault(tuple(key), []).append(entry)

    class_sizes: dict[str, int] = {}
    for key, members in strata.items():
        for name in key:
            class_sizes[name] = class_sizes.get(name, 0) + len(members)
    for name, size in class_sizes.items():
        if size < groups:
            raise InsufficientData(
                f"class {name!r} has {size} images but the split needs {groups}"
            )

    assigned: dict[str, str] = {}
    for key in sorted(strata):
        members = sorted(strata[key], key=lambda e: e.image.id)
        rng = random.Random((seed, key).__repr__())
        rng.shuffle(members)
        n = len(members)
        n_train = round(n * train_fraction)
        n_validate = round(n * validate_fraction)
        if groups == 2:
            n_validate = n - n_train
        elif n_train + n_validate > n:
            n_validate = n - n_train
        for idx, entry in enumerate(members):
            if idx < n_train:
                assigned[entry.image.id] = "train"
            elif idx < n_train + n_validate:
                assigned[entry.image.id] = "validate"
            else:
                assigned[entry.image.id] = "test"

    entries = [replace(e, split=assigned[e.image.id]) for e in manifest.entries]
    return DatasetManifest(entries=entries, registry=manifest.registry, version=manifest.version)


def export_feedback(
    feedback: Iterable,
    images: Mapping[str, ImageRef],
    registry: ClassRegistry | None = None,
) -> ExportResult:
    """Turn specialist corrections into a needs-annotation manifest.

    ``feedback`` yields records with feedback_id, job_id, verdict and
    corrected_class attributes; ``images`` maps job id to the stored image.
    Only wrong_class corrections produce entries: they name a disease the
    image actually shows. Confirmations add no new label information and
    not-a-disease verdicts are out of scope for training data; both are
    skipped with a reason, as are records whose image went missing.
    """
    registry = registry or default_registry()
    entries: list[ManifestEntry] = []
    skipped: list[tuple[str, str]] = []
    seen_hashes: set[str] = set()
    for record in feedback:
        fid = str(record.feedback_id)
        if record.verdict == "not_disease":
            skipped.append((fid, "not a disease image"))
            continue
        if record.verdict == "confirm":
            skipped.append((fid, "confirmation, no correction to export"))
            continue
        if record.verdict != "wrong_class":
            skipped.append((fid, f"unknown verdict {record.verdict!r}"))
            continue
        image = images.get(record.job_id)
        if image is None:
            skipped.append((fid, f"image for job {record.job_id!r} not stored"))
            continue
        if image.content_hash in seen_hashes:
            skipped.append((fid, "image already exported"))
            continue
        seen_hashes.add(image.content_hash)
        cls = registry.ensure(record.corrected_class)
        entries.append(
            ManifestEntry(
                image=image,
                labels=(),
                split="unassigned",
                source_tag=f"feedback:{fid}",
                pending_classes=(cls.name,),
            )
        )
    manifest = DatasetManifest(entries=entries, registry=registry)
    return ExportResult(manifest=manifest, skipped=tuple(skipped))
