"""HTTP service for the inpainting wire protocol.

Endpoints:

* ``GET /v1/health``  -> ``{"status": "ok", "backend": ...}``
* ``POST /v1/inpaint`` -> ``{"image_b64", "backend", "elapsed_ms"}``,
  or 400 (malformed), 422 (dimension/content mismatch), 503 (busy),
  413 (encoded payload above the configured size limit).

Procedural mode reproduces the pipeline client's reference texture byte for
byte. Model-adapter mode forwards ``(image, mask, condition, prompt, seed)``
to a user-supplied callable returning a full-size synthesized image; the
masked blend is re-applied server-side either way, so bytes outside the
mask always equal the input.

Request handlers are synchronous on purpose: the framework runs them on a
thread pool, which makes the concurrency semaphore (and its 503 busy path)
actually observable under parallel load.
"""

from __future__ import annotations

import argparse
import importlib
import threading
import time
from typing import Callable, Optional

import numpy as np
from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .config import ServiceConfig, load_config
from .texture import Legend, blend, procedural_inpaint
from .wire import ParsedRequest, WireError, encode_image, parse_inpaint_body

AdapterFn = Callable[[np.ndarray, np.ndarray, np.ndarray, str, int], np.ndarray]


def load_adapter(spec: str) -> AdapterFn:
    module_name, _, attr = spec.partition(":")
    if not attr:
        raise ValueError(f"adapter spec {spec!r} must look like 'module:callable'")
    return getattr(importlib.import_module(module_name), attr)


def create_app(
    config: Optional[ServiceConfig] = None,
    adapter: Optional[AdapterFn] = None,
    legend: Optional[Legend] = None,
) -> FastAPI:
    config = config or ServiceConfig()
    legend = legend or Legend.load_default()
    if config.mode == "model-adapter" and adapter is None:
        if not config.adapter:
            raise ValueError("model-adapter mode needs an adapter callable")
        adapter = load_adapter(config.adapter)
    backend_id = "service-procedural/1" if config.mode == "procedural" else "service-adapter/1"

    app = FastAPI(title="inpainting service", docs_url=None, redoc_url=None)
    gate = threading.Semaphore(config.max_concurrent)
    app.state.gate = gate  # reachable for deterministic busy-path tests

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "bad_json"})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "backend": backend_id}

    @app.post("/v1/inpaint")
    def inpaint(body: dict = Body(...)):
        encoded_size = sum(
            len(body.get(f, "")) for f in ("image_b64", "mask_b64", "condition_b64")
            if isinstance(body.get(f), str)
        )
        if encoded_size > config.request_size_limit:
            return JSONResponse(status_code=413, content={"error": "request_too_large"})
        if not gate.acquire(blocking=False):
            return JSONResponse(status_code=503, content={"error": "busy"})
        try:
            start = time.perf_counter()
            try:
                parsed = parse_inpaint_body(body)
                out = _run(parsed)
            except WireError as exc:
                return JSONResponse(
                    status_code=exc.status, content={"error": exc.code, "detail": exc.detail}
                )
            elapsed_ms = (time.perf_counter() - start) * 1000.0
            return {
                "image_b64": encode_image(out),
                "backend": backend_id,
                "elapsed_ms": elapsed_ms,
            }
        finally:
            gate.release()

    def _run(parsed: ParsedRequest) -> np.ndarray:
        if config.mode == "procedural":
            try:
                return procedural_inpaint(
                    parsed.seed, parsed.image, parsed.mask, parsed.condition, legend
                )
            except KeyError as exc:
                raise WireError(422, "unknown_class_color", str(exc)) from exc
        synth = adapter(parsed.image, parsed.mask, parsed.condition, parsed.prompt, parsed.seed)
        synth = np.asarray(synth, dtype=np.uint8)
        if synth.shape != parsed.image.shape:
            raise WireError(422, "adapter_shape_mismatch", f"adapter returned {synth.shape}")
        return blend(synth, parsed.image, parsed.mask)

    return app


def main(argv=None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(description="inpainting wire-protocol service")
    parser.add_argument("--config", type=str, default=None, help="service.toml path")
    parser.add_argument("--host", type=str, default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args(argv)

    config = load_config(args.config)
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
