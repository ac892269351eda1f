"""Deterministic synthetic scenes for end-to-end exercises.

A scene is a list of solid color rectangles on a uniform background. The
generator returns both the PNG bytes and the ground truth those rectangles
imply under a color-to-class map, so it doubles as its own oracle: the
synthetic backend must recover exactly what the generator placed.
"""

from __future__ import annotations

import io
from collections.abc import Sequence

from PIL import Image, ImageColor, ImageDraw

from ..domain import BoundingBox, ClassRegistry, GroundTruthBox, default_registry
from .backends import DEFAULT_COLOR_MAP


def synth_image(
    scene: Sequence[tuple[BoundingBox, str]],
    width: int,
    height: int,
    background: str = "#d0d0c8",
    color_map: dict[str, str] | None = None,
    registry: ClassRegistry | None = None,
) -> tuple[bytes, tuple[GroundTruthBox, ...]]:
    """Render ``scene`` rectangles and return (png bytes, ground truth).

    Each rectangle names either a mapped color or a class from the color
    map; class names resolve to their color (first in sorted color order
    if several map to the same class). Coordinates must be integers inside
    the frame and distinct from the background color.
    """
    color_map = dict(color_map or DEFAULT_COLOR_MAP)
    registry = registry or default_registry()
    normalized = {ImageColor.getrgb(color): name for color, name in color_map.items()}
    by_class: dict[str, tuple[int, int, int]] = {}
    for color, name in sorted(color_map.items()):
        by_class.setdefault(name.strip().lower(), ImageColor.getrgb(color))
    bg = ImageColor.getrgb(background)
    if bg in normalized:
        raise ValueError("background color collides with a mapped scene color")

    image = Image.new("RGB", (width, height), color=bg)
    draw = ImageDraw.Draw(image)
    ground_truth: list[GroundTruthBox] = []
    for box, color in scene:
        key = color.strip().lower()
        if key in by_class:
            rgb = by_class[key]
        else:
            try:
                rgb = ImageColor.getrgb(color)
            except ValueError:
                raise ValueError(
                    f"{color!r} is neither a mapped class nor a color"
                ) from None
        if rgb not in normalized:
            raise ValueError(f"scene color {color!r} is not in the color map")
        if box.x_max > width or box.y_max > height:
            raise ValueError(f"rectangle {box.as_tuple()} exceeds the {width}x{height} frame")
        if any(c != int(c) for c in box.as_tuple()):
            raise ValueError("scene rectangles must have integer pixel coordinates")
        # Half-open box [x_min, x_max) fills pixels x_min .. x_max-1.
        draw.rectangle((box.x_min, box.y_min, box.x_max - 1, box.y_max - 1), fill=rgb)
        ground_truth.append(GroundTruthBox(box=box, cls=registry.ensure(normalized[rgb])))

    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue(), tuple(ground_truth)
