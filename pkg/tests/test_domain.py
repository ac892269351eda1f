"""Vocabulary types: registry semantics, box validation, hashing."""

import hashlib

import pytest

from paddybot.domain import (
    BoundingBox,
    ClassRegistry,
    DegenerateBox,
    Detection,
    DomainError,
    DuplicateClass,
    GroundTruthBox,
    ImageRef,
    UnknownClass,
    content_hash,
    default_registry,
    validate_box,
)


class TestClassRegistry:
    def test_stock_classes_have_stable_ids(self):
        registry = default_registry()
        assert registry.names == ("blast", "blight", "bsp", "nbs", "streak")
        assert [registry.lookup(n).id for n in registry.names] == [0, 1, 2, 3, 4]

    def test_lookup_is_case_insensitive(self):
        registry = default_registry()
        assert registry.lookup("BLAST") is registry.lookup("blast")
        assert "  Blight " in registry

    def test_register_assigns_next_id(self):
        registry = default_registry()
        extra = registry.register("rrsv")
        assert extra.id == 5
        assert len(registry) == 6

    def test_register_rejects_duplicates_and_blanks(self):
        registry = default_registry()
        with pytest.raises(DuplicateClass):
            registry.register("Blast")
        with pytest.raises(DomainError):
            registry.register("   ")

    def test_ensure_returns_existing_or_registers(self):
        registry = default_registry()
        assert registry.ensure("blast").id == 0
        assert registry.ensure("rrsv").id == 5
        assert registry.ensure("rrsv").id == 5

    def test_unknown_lookups_raise(self):
        registry = default_registry()
        with pytest.raises(UnknownClass):
            registry.lookup("smut")
        with pytest.raises(UnknownClass):
            registry.by_id(99)


class TestBoundingBox:
    def test_area(self):
        assert BoundingBox(0, 0, 10, 10).area == 100
        assert BoundingBox(2.5, 1.0, 5.0, 3.0).area == pytest.approx(5.0)

    def test_rejects_zero_or_negative_extent(self):
        with pytest.raises(DegenerateBox):
            BoundingBox(5, 5, 5, 10)
        with pytest.raises(DegenerateBox):
            BoundingBox(5, 5, 10, 5)
        with pytest.raises(DegenerateBox):
            BoundingBox(10, 0, 5, 10)

    def test_rejects_negative_coordinates(self):
        with pytest.raises(DomainError):
            BoundingBox(-1, 0, 10, 10)

    def test_validate_box_clamps_to_frame(self):
        box = BoundingBox(90, 90, 150, 160)
        clamped = validate_box(box, width=100, height=100)
        assert clamped.as_tuple() == (90, 90, 100, 100)

    def test_validate_box_keeps_inside_boxes_untouched(self):
        box = BoundingBox(1, 2, 3, 4)
        assert validate_box(box, 10, 10) is box

    def test_validate_box_rejects_fully_outside(self):
        box = BoundingBox(200, 200, 300, 300)
        with pytest.raises(DegenerateBox):
            validate_box(box, width=100, height=100)


class TestDetection:
    def test_confidence_bounds(self):
        cls = default_registry().lookup("blast")
        box = BoundingBox(0, 0, 1, 1)
        Detection(box=box, cls=cls, confidence=0.0)
        Detection(box=box, cls=cls, confidence=1.0)
        with pytest.raises(DomainError):
            Detection(box=box, cls=cls, confidence=1.5)
        with pytest.raises(DomainError):
            Detection(box=box, cls=cls, confidence=-0.1)


class TestGroundTruthBox:
    def test_matched_flag_is_not_part_of_identity(self):
        cls = default_registry().lookup("bsp")
        box = BoundingBox(0, 0, 4, 4)
        assert GroundTruthBox(box, cls) == GroundTruthBox(box, cls, matched=True)


class TestImageRef:
    def test_rejects_empty_frames(self):
        with pytest.raises(DomainError):
            ImageRef(id="x", content_hash="h", width=0, height=5, storage_path="p")

    def test_content_hash_matches_sha256(self):
        data = b"leaf image bytes"
        assert content_hash(data) == hashlib.sha256(data).hexdigest()


def test_fresh_registries_are_independent():
    a = default_registry()
    b = default_registry()
    a.register("rrsv")
    assert "rrsv" not in b
    assert isinstance(a, ClassRegistry)
