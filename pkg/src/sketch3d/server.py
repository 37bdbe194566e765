"""HTTP inference service for the sketch studio.

Stateless: one checkpoint loaded read-only at startup, a bounded worker pool
around inference, JSON request logging, permissive CORS for the studio.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import threading
import time
import uuid

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from .mesh import obj_dumps
from .networks import Generator
from .pipeline.infer import InferenceInputError, decode_sketch_bytes

__all__ = ["create_app", "MAX_BODY_BYTES"]

MAX_BODY_BYTES = 4 * 1024 * 1024

log = logging.getLogger("sketch3d.server")


def create_app(generator: Generator, checkpoint_id: str,
               max_body: int = MAX_BODY_BYTES, cors_origins: str = "*",
               max_concurrency: int = 4, static_dir=None) -> FastAPI:
    app = FastAPI(title="sketch3d inference service", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[o.strip() for o in cors_origins.split(",")],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )
    infer_slots = threading.Semaphore(max_concurrency)

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        t0 = time.perf_counter()
        response = await call_next(request)
        log.info(json.dumps({
            "path": request.url.path,
            "method": request.method,
            "status": response.status_code,
            "ms": round((time.perf_counter() - t0) * 1000.0, 3),
        }))
        return response

    @app.get("/api/health")
    def health():
        return {"status": "ok", "checkpoint": checkpoint_id}

    @app.post("/api/infer")
    async def infer_endpoint(request: Request):
        body = await request.body()
        if len(body) > max_body:
            return JSONResponse({"error": f"request body exceeds {max_body} bytes"},
                                status_code=413)
        content_type = request.headers.get("content-type", "").split(";")[0].strip()
        try:
            if content_type == "application/json":
                try:
                    payload = json.loads(body)
                    png = base64.b64decode(payload["image_base64"], validate=True)
                except (json.JSONDecodeError, KeyError, TypeError,
                        binascii.Error) as exc:
                    raise InferenceInputError(
                        f"JSON body must carry valid image_base64: {exc}")
            else:
                png = body
            sketch, meta = decode_sketch_bytes(png, generator.config.input_size)
            t0 = time.perf_counter()
            with infer_slots:
                mesh = generator.generate(sketch)
            timing_ms = (time.perf_counter() - t0) * 1000.0
        except InferenceInputError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        except Exception:  # noqa: BLE001
            error_id = uuid.uuid4().hex[:12]
            log.exception("internal inference failure id=%s", error_id)
            return JSONResponse({"error": "internal error", "id": error_id},
                                status_code=500)

        if "model/obj" in request.headers.get("accept", ""):
            return PlainTextResponse(obj_dumps(mesh), media_type="model/obj")
        return JSONResponse({
            "vertices": [[float(c) for c in v] for v in mesh.vertex_array()],
            "faces": [[int(i) for i in f] for f in mesh.faces],
            "timing_ms": timing_ms,
            "checkpoint_id": checkpoint_id,
            "input": meta,
        })

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="studio")

    return app
