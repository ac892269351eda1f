"""Reply-image rendering: box outlines with class/confidence tags."""

from __future__ import annotations

import io

from PIL import ImageDraw, ImageFont

from ..domain import DegenerateBox, Detection, validate_box
from .backends import decode_image

OUTLINE_WIDTH = 2

# One stable color per class id, cycled for anything beyond the palette.
PALETTE = (
    "#e6194b",
    "#3cb44b",
    "#4363d8",
    "#f58231",
    "#911eb4",
    "#46f0f0",
    "#f032e6",
    "#bcf60c",
)


def class_color(class_id: int) -> str:
    return PALETTE[class_id % len(PALETTE)]


def tag_text(det: Detection) -> str:
    return f"{det.cls.name} {det.confidence:.2f}"


def render_annotation(image_bytes: bytes, detections: list[Detection] | tuple[Detection, ...]) -> bytes:
    """Draw each detection's rectangle outline and tag onto a copy.

    The input bytes are never modified; output is PNG with identical
    dimensions. An empty detection list yields a pixel-identical copy.
    Boxes reaching past the frame are clamped, not rejected.
    """
    image = decode_image(image_bytes).convert("RGB")
    draw = ImageDraw.Draw(image)
    font = ImageFont.load_default()
    width, height = image.size

    for det in sorted(detections, key=lambda d: -d.confidence):
        try:
            box = validate_box(det.box, width, height)
        except DegenerateBox:
            continue
        color = class_color(det.cls.id)
        draw.rectangle(
            (box.x_min, box.y_min, box.x_max - 1, box.y_max - 1),
            outline=color,
            width=OUTLINE_WIDTH,
        )
        text = tag_text(det)
        text_box = draw.textbbox((0, 0), text, font=font)
        text_h = text_box[3] - text_box[1]
        tag_y = box.y_min - text_h - 4
        if tag_y < 0:
            tag_y = box.y_min + OUTLINE_WIDTH
        tag_x = min(box.x_min, max(0.0, width - (text_box[2] - text_box[0]) - 4))
        bg = (tag_x, tag_y, tag_x + (text_box[2] - text_box[0]) + 4, tag_y + text_h + 4)
        draw.rectangle(bg, fill=color)
        draw.text((tag_x + 2, tag_y + 2 - text_box[1]), text, fill="white", font=font)

    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue()


def render_preview(image_bytes: bytes, max_edge: int = 240) -> bytes:
    """Downscaled variant with preserved aspect ratio, for chat previews."""
    image = decode_image(image_bytes).convert("RGB")
    image.thumbnail((max_edge, max_edge))
    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue()
