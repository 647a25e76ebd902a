"""Protocol conformance probes for remote inpainting services.

``serve-check`` drives these against a live URL: health shape, golden
parity with the in-process procedural backend (the reference for the wire
contract), and the 400/422/503 error paths. The busy probe fires concurrent
bursts and needs the service to run with a low concurrency bound to be
observable.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import httpx
import numpy as np

from .backend import InpaintRequest, ProceduralBackend, decode_image_b64, encode_request
from .raster import default_class_table, feather

GOLDEN_SEED_COUNT = 20
BUSY_BURST = 12
BUSY_ROUNDS = 5


@dataclass
class ProbeResult:
    name: str
    passed: bool
    detail: str = ""


def make_probe_request(seed: int, size: int = 64, table=None) -> InpaintRequest:
    """Deterministic request fixture: split condition map, ramp image, soft disc."""
    table = table or default_class_table()
    lut = table.color_lut()
    condition = np.zeros((size, size, 3), dtype=np.uint8)
    condition[:, : size // 2] = lut[table.index_of("Building")]
    condition[:, size // 2 :] = lut[table.index_of("Water")]

    bands = np.empty((5, size, size), dtype=np.uint8)
    for b in range(5):
        ramp = (np.arange(size)[:, None] * 3 + np.arange(size)[None, :] + 17 * b + seed) % 256
        bands[b] = ramp.astype(np.uint8)

    yy, xx = np.mgrid[0:size, 0:size]
    disc = (yy - size // 2) ** 2 + (xx - size // 2) ** 2 <= (size // 5) ** 2
    mask = feather(disc, 4)

    return InpaintRequest(
        tile_id="probe",
        variant=seed,
        seed=seed,
        prompt="conformance probe",
        image=bands,
        mask=mask,
        condition=condition,
    )


def serve_check(base_url: str, transport=None, timeout: float = 30.0) -> list[ProbeResult]:
    base_url = base_url.rstrip("/")
    results: list[ProbeResult] = []
    with httpx.Client(timeout=timeout, transport=transport) as client:
        results.append(_probe_health(client, base_url))
        results.append(_probe_golden(client, base_url))
        results.append(_probe_bad_encoding(client, base_url))
        results.append(_probe_dimension_mismatch(client, base_url))
        results.append(_probe_busy(base_url, transport, timeout))
    return results


def _probe_health(client, base_url) -> ProbeResult:
    try:
        resp = client.get(f"{base_url}/v1/health")
    except httpx.HTTPError as exc:
        return ProbeResult("health", False, f"transport error: {exc}")
    if resp.status_code != 200:
        return ProbeResult("health", False, f"status {resp.status_code}")
    body = resp.json()
    if body.get("status") != "ok" or "backend" not in body:
        return ProbeResult("health", False, f"unexpected body {body}")
    return ProbeResult("health", True, body.get("backend", ""))


def _probe_golden(client, base_url) -> ProbeResult:
    reference = ProceduralBackend()
    for seed in range(GOLDEN_SEED_COUNT):
        request = make_probe_request(seed)
        expected = reference.inpaint(request).image
        try:
            resp = client.post(f"{base_url}/v1/inpaint", json=encode_request(request))
        except httpx.HTTPError as exc:
            return ProbeResult("golden_parity", False, f"seed {seed}: transport error: {exc}")
        if resp.status_code != 200:
            return ProbeResult("golden_parity", False, f"seed {seed}: status {resp.status_code}")
        payload = resp.json()
        got = decode_image_b64(payload["image_b64"], 5, request.height, request.width)
        if not np.array_equal(got, expected):
            bad = int((got != expected).sum())
            return ProbeResult("golden_parity", False, f"seed {seed}: {bad} bytes differ")
    return ProbeResult("golden_parity", True, f"{GOLDEN_SEED_COUNT} seeds byte-identical")


def _probe_bad_encoding(client, base_url) -> ProbeResult:
    body = encode_request(make_probe_request(0))
    body["image_b64"] = "!!! not base64 !!!"
    resp = client.post(f"{base_url}/v1/inpaint", json=body)
    if resp.status_code != 400:
        return ProbeResult("bad_encoding_400", False, f"status {resp.status_code}, wanted 400")
    return ProbeResult("bad_encoding_400", True)


def _probe_dimension_mismatch(client, base_url) -> ProbeResult:
    body = encode_request(make_probe_request(0))
    import base64

    body["mask_b64"] = base64.b64encode(b"\x00" * 7).decode()
    resp = client.post(f"{base_url}/v1/inpaint", json=body)
    if resp.status_code != 422:
        return ProbeResult("dimension_422", False, f"status {resp.status_code}, wanted 422")
    return ProbeResult("dimension_422", True)


def _probe_busy(base_url, transport, timeout) -> ProbeResult:
    body = encode_request(make_probe_request(1, size=256))
    for _ in range(BUSY_ROUNDS):
        with httpx.Client(timeout=timeout, transport=transport) as client:

            def fire(_):
                try:
                    return client.post(f"{base_url}/v1/inpaint", json=body).status_code
                except httpx.HTTPError:
                    return -1

            with concurrent.futures.ThreadPoolExecutor(max_workers=BUSY_BURST) as pool:
                codes = list(pool.map(fire, range(BUSY_BURST)))
        if any(c == 503 for c in codes):
            ok_codes = set(codes) - {503}
            if not ok_codes <= {200}:
                return ProbeResult("busy_503", False, f"unexpected codes {sorted(ok_codes)}")
            return ProbeResult("busy_503", True, f"saw {codes.count(503)} busy responses")
    return ProbeResult(
        "busy_503",
        False,
        "no 503 observed; run the service with a low concurrency limit for this probe",
    )
