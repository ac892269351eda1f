"""Shared vocabulary types: disease classes, boxes, detections, image refs."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

DEFAULT_CLASS_NAMES = ("blast", "blight", "bsp", "nbs", "streak")


class DomainError(ValueError):
    """Base class for domain validation failures."""


class DegenerateBox(DomainError):
    """Box has zero area, either as given or after clamping to the frame."""


class UnknownClass(DomainError):
    """Class name or id is not present in the registry."""


class DuplicateClass(DomainError):
    """Class name already registered (names are case-insensitive)."""


@dataclass(frozen=True)
class DiseaseClass:
    """A registered disease class with a stable integer id."""

    id: int
    name: str

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise DomainError("class name must be non-empty")


class ClassRegistry:
    """Case-insensitive name -> DiseaseClass registry.

    The five stock rice-disease classes are pre-registered with ids 0-4;
    further classes get the next free id on registration.
    """

    def __init__(self, names: tuple[str, ...] = DEFAULT_CLASS_NAMES) -> None:
        self._by_name: dict[str, DiseaseClass] = {}
        self._by_id: dict[int, DiseaseClass] = {}
        for name in names:
            self.register(name)

    def register(self, name: str) -> DiseaseClass:
        key = name.strip().lower()
        if not key:
            raise DomainError("class name must be non-empty")
        if key in self._by_name:
            raise DuplicateClass(f"class {key!r} already registered")
        cls = DiseaseClass(id=len(self._by_id), name=key)
        self._by_name[key] = cls
        self._by_id[cls.id] = cls
        return cls

    def ensure(self, name: str) -> DiseaseClass:
        """Return the class for ``name``, registering it if new."""
        key = name.strip().lower()
        if key in self._by_name:
            return self._by_name[key]
        return self.register(key)

    def lookup(self, name: str) -> DiseaseClass:
        try:
            return self._by_name[name.strip().lower()]
        except KeyError:
            raise UnknownClass(f"unknown class {name!r}") from None

    def by_id(self, class_id: int) -> DiseaseClass:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise UnknownClass(f"unknown class id {class_id}") from None

    def __contains__(self, name: str) -> bool:
        return name.strip().lower() in self._by_name

    def __iter__(self):
        return iter(self._by_id.values())

    def __len__(self) -> int:
        return len(self._by_id)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(cls.name for cls in self)


def default_registry() -> ClassRegistry:
    """Fresh registry holding only the five stock classes."""
    return ClassRegistry()


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel space, origin top-left, corner form."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min < 0 or self.y_min < 0:
            raise DomainError(f"box coordinates must be non-negative: {self}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise DegenerateBox(f"box must have strictly positive area: {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def validate_box(box: BoundingBox, width: float, height: float) -> BoundingBox:
    """Clamp ``box`` to the image frame, rejecting boxes that collapse.

    Backends occasionally emit boxes slightly outside the frame; those are
    clamped. A box entirely outside the frame has no area left and raises
    DegenerateBox.
    """
    if width <= 0 or height <= 0:
        raise DomainError(f"frame must be positive, got {width}x{height}")
    x_min = min(max(box.x_min, 0.0), width)
    y_min = min(max(box.y_min, 0.0), height)
    x_max = min(max(box.x_max, 0.0), width)
    y_max = min(max(box.y_max, 0.0), height)
    if x_min >= x_max or y_min >= y_max:
        raise DegenerateBox(
            f"box {box.as_tuple()} has zero area after clamping to {width}x{height}"
        )
    if (x_min, y_min, x_max, y_max) == box.as_tuple():
        return box
    return BoundingBox(x_min, y_min, x_max, y_max)


@dataclass(frozen=True)
class Detection:
    """One predicted box with its class and confidence."""

    box: BoundingBox
    cls: DiseaseClass
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    """A labeled box. ``matched`` is transient evaluation state and stays
    False on stored data; the matcher tracks its own bookkeeping."""

    box: BoundingBox
    cls: DiseaseClass
    matched: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class ImageRef:
    """Pointer to stored image bytes plus the facts needed without decoding."""

    id: str
    content_hash: str
    width: int
    height: int
    storage_path: str

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image dimensions must be positive: {self.width}x{self.height}")


def content_hash(data: bytes) -> str:
    """Deterministic digest used to key images everywhere (dedupe, fixtures)."""
    return hashlib.sha256(data).hexdigest()
