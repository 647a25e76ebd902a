"""Wire request validation with explicit error codes.

400 = the request is malformed (missing/ill-typed fields, broken base64);
422 = well-formed but inconsistent (payload sizes vs. declared dimensions,
condition colors outside the legend). Dimension checks only run after the
request decodes cleanly.
"""

from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass

import numpy as np


class WireError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.status = status
        self.code = code
        self.detail = detail or code


@dataclass
class ParsedRequest:
    tile_id: str
    variant: int
    seed: int
    prompt: str
    image: np.ndarray  # (bands, h, w) uint8
    mask: np.ndarray  # (h, w) uint8
    condition: np.ndarray  # (h, w, 3) uint8


_REQUIRED = {
    "tile_id": str,
    "variant": int,
    "seed": int,
    "width": int,
    "height": int,
    "bands": int,
    "image_b64": str,
    "mask_b64": str,
    "condition_b64": str,
}


def _b64(field: str, payload: str) -> bytes:
    try:
        return base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise WireError(400, "bad_encoding", f"{field}: {exc}") from exc


def parse_inpaint_body(doc) -> ParsedRequest:
    if not isinstance(doc, dict):
        raise WireError(400, "bad_body", "request body must be a JSON object")
    for field, ftype in _REQUIRED.items():
        if field not in doc:
            raise WireError(400, "missing_field", f"missing field {field!r}")
        if not isinstance(doc[field], ftype) or isinstance(doc[field], bool):
            raise WireError(400, "bad_type", f"field {field!r} must be {ftype.__name__}")

    width, height, bands = doc["width"], doc["height"], doc["bands"]
    if width < 1 or height < 1 or bands < 1:
        raise WireError(400, "bad_dimensions", "width, height and bands must be positive")

    image = _b64("image_b64", doc["image_b64"])
    mask = _b64("mask_b64", doc["mask_b64"])
    condition = _b64("condition_b64", doc["condition_b64"])

    if len(image) != bands * height * width:
        raise WireError(
            422, "dimension_mismatch",
            f"image payload {len(image)} bytes, expected {bands * height * width}",
        )
    if len(mask) != height * width:
        raise WireError(
            422, "dimension_mismatch",
            f"mask payload {len(mask)} bytes, expected {height * width}",
        )
    if len(condition) != height * width * 3:
        raise WireError(
            422, "dimension_mismatch",
            f"condition payload {len(condition)} bytes, expected {height * width * 3}",
        )

    return ParsedRequest(
        tile_id=doc["tile_id"],
        variant=doc["variant"],
        seed=doc["seed"],
        prompt=doc.get("prompt", ""),
        image=np.frombuffer(image, dtype=np.uint8).reshape(bands, height, width).copy(),
        mask=np.frombuffer(mask, dtype=np.uint8).reshape(height, width).copy(),
        condition=np.frombuffer(condition, dtype=np.uint8).reshape(height, width, 3).copy(),
    )


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(image).tobytes()).decode()
