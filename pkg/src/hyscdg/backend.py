"""Pixel synthesis boundary: backend contract, procedural backend, wire client.

Every backend must honor the masked-blend contract: with ``a`` the 8-bit
soft-mask weight, ``out = round((a * synth + (255 - a) * original) / 255)``
per band, computed in exact integer arithmetic. Pixels with weight 0 are
therefore bit-identical to the input. The client re-applies the blend to
remote responses, so a misbehaving server cannot leak synthesis outside the
mask.

The procedural backend exists to exercise the pipeline without a model: it
fills the masked area with the legend color of the target class plus seeded
noise (amplitude 16) on the color/NIR bands and a per-class constant on the
elevation band. The noise is a stateless counter hash of
``(seed, pixel, band)``, so any implementation of the same hash reproduces
it bit for bit.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from . import rng
from .raster import ClassTable, SoftMask

NOISE_AMPLITUDE = 16
ELEVATION_BAND = 4

# per-class elevation constants for synthesized content, by class name;
# anything not listed (roads, water, fields...) sits at terrain level 0
ELEVATION_CONSTANTS = {
    "Building": 200,
    "Coniferous": 160,
    "Mixed": 155,
    "Deciduous": 150,
    "Ligneous": 140,
    "Greenhouse": 110,
    "Brushwood": 80,
    "Vineyard": 40,
    "Snow": 20,
}


class BackendError(RuntimeError):
    """Typed backend failure with retry metadata."""

    def __init__(self, message: str, kind: str, retryable: bool = False, attempts: int = 1):
        super().__init__(message)
        self.kind = kind
        self.retryable = retryable
        self.attempts = attempts


@dataclass
class InpaintRequest:
    tile_id: str
    variant: int
    seed: int
    prompt: str
    image: np.ndarray  # (bands, H, W) uint8
    mask: SoftMask  # (H, W) float32 in [0, 1]
    condition: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        h, w = self.image.shape[1], self.image.shape[2]
        if self.condition.shape != (h, w, 3):
            raise ValueError("condition map dimensions must match the tile")
        if self.mask.shape != (h, w):
            raise ValueError("mask dimensions must match the tile")
        if self.mask.min() < 0 or self.mask.max() > 1:
            raise ValueError("soft mask weights must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


@dataclass
class InpaintResult:
    image: np.ndarray  # (bands, H, W) uint8
    backend: str
    elapsed_ms: float


class InpaintBackend(Protocol):
    backend_id: str

    def inpaint(self, request: InpaintRequest) -> InpaintResult: ...


def render_condition_map(labels: np.ndarray, table: ClassTable) -> np.ndarray:
    """RGB raster of legend colors, the semantic conditioning input."""
    if labels.size and labels.max() >= table.k:
        raise ValueError(f"label {labels.max()} outside the class table (K={table.k})")
    return table.color_lut()[labels.astype(np.int64)]


def condition_to_labels(condition: np.ndarray, table: ClassTable) -> np.ndarray:
    """Invert the legend rendering; colors are pairwise distinct by invariant."""
    keys = (
        condition[..., 0].astype(np.int64) * 65536
        + condition[..., 1].astype(np.int64) * 256
        + condition[..., 2].astype(np.int64)
    )
    lut = {(c[0] * 65536 + c[1] * 256 + c[2]): i for i, c in enumerate(table.color_lut().tolist())}
    labels = np.zeros(keys.shape, dtype=np.int64)
    for value in np.unique(keys):
        if int(value) not in lut:
            r, g, b = value >> 16, (value >> 8) & 255, value & 255
            raise ValueError(f"condition color ({r},{g},{b}) is not in the class table")
        labels[keys == value] = lut[int(value)]
    return labels


def quantize_mask(mask: SoftMask) -> np.ndarray:
    """8-bit weights exactly as they travel on the wire (x255, round half up)."""
    return np.floor(mask.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def blend(synth: np.ndarray, original: np.ndarray, mask_bytes: np.ndarray) -> np.ndarray:
    """Exact integer masked blend shared by all backends."""
    a = mask_bytes.astype(np.int64)[None, :, :]
    s = synth.astype(np.int64)
    i = original.astype(np.int64)
    num = a * s + (255 - a) * i
    return ((2 * num + 255) // 510).astype(np.uint8)


def class_base_colors(table: ClassTable) -> np.ndarray:
    """(K, 5) uint8 base values per class: legend RGB, derived NIR, elevation."""
    lut = table.color_lut().astype(np.int64)
    nir = np.clip(2 * lut[:, 1] - (lut[:, 0] + lut[:, 2]) // 2, 0, 255)
    elev = np.array(
        [ELEVATION_CONSTANTS.get(c.name, 0) for c in table.classes],
        dtype=np.int64,
    )
    return np.stack(
        [lut[:, 0], lut[:, 1], lut[:, 2], nir, elev],
        axis=1,
    ).astype(np.uint8)


def procedural_texture(
    seed: int, labels: np.ndarray, table: ClassTable, n_bands: int = 5
) -> np.ndarray:
    """Seeded per-class texture: base color +/- counter-hash noise per band."""
    h, w = labels.shape
    base = class_base_colors(table).astype(np.int64)
    out = np.empty((n_bands, h, w), dtype=np.uint8)
    for band in range(n_bands):
        plane = base[labels, band]
        if band == ELEVATION_BAND:
            out[band] = plane.astype(np.uint8)
        else:
            noise = rng.noise_grid(seed, h, w, band, NOISE_AMPLITUDE)
            out[band] = np.clip(plane + noise, 0, 255).astype(np.uint8)
    return out


class ProceduralBackend:
    """Deterministic in-process backend for tests and desk-scale runs."""

    backend_id = "procedural/1"

    def __init__(self, table: Optional[ClassTable] = None):
        from .raster import default_class_table

        self.table = table or default_class_table()

    def inpaint(self, request: InpaintRequest) -> InpaintResult:
        start = time.perf_counter()
        labels = condition_to_labels(request.condition, self.table)
        synth = procedural_texture(request.seed, labels, self.table, request.image.shape[0])
        out = blend(synth, request.image, quantize_mask(request.mask))
        return InpaintResult(
            image=out,
            backend=self.backend_id,
            elapsed_ms=(time.perf_counter() - start) * 1000.0,
        )


# ---------------------------------------------------------------------------
# wire protocol
# ---------------------------------------------------------------------------


def encode_request(request: InpaintRequest) -> dict:
    return {
        "tile_id": request.tile_id,
        "variant": request.variant,
        "seed": request.seed,
        "prompt": request.prompt,
        "width": request.width,
        "height": request.height,
        "bands": int(request.image.shape[0]),
        "image_b64": base64.b64encode(np.ascontiguousarray(request.image).tobytes()).decode(),
        "mask_b64": base64.b64encode(quantize_mask(request.mask).tobytes()).decode(),
        "condition_b64": base64.b64encode(
            np.ascontiguousarray(request.condition).tobytes()
        ).decode(),
    }


def decode_image_b64(payload: str, bands: int, height: int, width: int) -> np.ndarray:
    raw = base64.b64decode(payload, validate=True)
    expected = bands * height * width
    if len(raw) != expected:
        raise ValueError(f"image payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(bands, height, width).copy()


class RemoteBackend:
    """HTTP client for the inpainting wire protocol.

    Retries transport failures and 503 busy responses with exponential
    backoff (3 attempts by default) and bounds in-flight requests with a
    semaphore. Responses are re-blended locally so the outside-mask identity
    holds regardless of what the server returned.
    """

    def __init__(
        self,
        base_url: str,
        max_in_flight: int = 4,
        attempts: int = 3,
        timeout: float = 60.0,
        backoff: float = 0.25,
        transport=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.attempts = attempts
        self.backoff = backoff
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self.backend_id = f"remote({self.base_url})"

    def close(self):
        self._client.close()

    def inpaint(self, request: InpaintRequest) -> InpaintResult:
        import httpx

        body = encode_request(request)
        start = time.perf_counter()
        last_error: Optional[str] = None
        for attempt in range(1, self.attempts + 1):
            try:
                with self._gate:
                    resp = self._client.post(f"{self.base_url}/v1/inpaint", json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport: {exc}"
                time.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code == 503:
                last_error = "503 busy"
                time.sleep(self.backoff * 2 ** (attempt - 1))
                continue
            if resp.status_code != 200:
                raise BackendError(
                    f"backend returned {resp.status_code}: {resp.text[:200]}",
                    kind="protocol",
                    retryable=False,
                    attempts=attempt,
                )
            payload = resp.json()
            try:
                synth = decode_image_b64(
                    payload["image_b64"],
                    request.image.shape[0],
                    request.height,
                    request.width,
                )
            except (KeyError, ValueError) as exc:
                raise BackendError(
                    f"bad response payload: {exc}", kind="payload", retryable=False, attempts=attempt
                ) from exc
            out = blend(synth, request.image, quantize_mask(request.mask))
            return InpaintResult(
                image=out,
                backend=payload.get("backend", self.backend_id),
                elapsed_ms=(time.perf_counter() - start) * 1000.0,
            )
        raise BackendError(
            f"backend unavailable after {self.attempts} attempts ({last_error})",
            kind="unavailable",
            retryable=True,
            attempts=self.attempts,
        )


def make_backend(name: str, url: Optional[str] = None, table: Optional[ClassTable] = None):
    if name == "procedural":
        return ProceduralBackend(table=table)
    if name == "remote":
        if not url:
            raise ValueError("remote backend needs a URL (--url or HYSCDG_BACKEND_URL)")
        return RemoteBackend(url)
    raise ValueError(f"unknown backend {name!r}")
