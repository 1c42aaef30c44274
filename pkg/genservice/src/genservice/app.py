"""HTTP surface of the generation sidecar.

    POST /generate {"prompt", "top_p", "top_k", "temperature",
                    "max_new_tokens", "seed"}   -> {"text", "model_id"}
    POST /score    {"context", "continuation"}  -> {"nll"}
    GET  /healthz                               -> {"status": "ok"}

Malformed bodies get 400 (fatal for clients); requests beyond the
capacity bound get 503 (clients retry). There is no request buffering
beyond the bound.
"""

from __future__ import annotations

import logging
import threading

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .lm import load_backend

log = logging.getLogger("genservice")


class GenerateRequest(BaseModel):
    prompt: str = Field(min_length=1)
    top_p: float = Field(default=0.9, gt=0.0, le=1.0)
    top_k: int = Field(default=0, ge=0)
    temperature: float = Field(default=1.0, gt=0.0)
    max_new_tokens: int = Field(default=64, ge=1, le=1024)
    seed: int = 0


class ScoreRequest(BaseModel):
    context: str = Field(min_length=1)
    continuation: str = Field(min_length=1)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    backend = load_backend(config.model, device=config.device)
    capacity = threading.Semaphore(config.max_concurrent)
    app = FastAPI(title="genservice")
    app.state.config = config
    app.state.capacity = capacity

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors())})

    def over_capacity():
        return JSONResponse(status_code=503, content={"detail": "over capacity"})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/generate")
    def generate(body: GenerateRequest):
        if not capacity.acquire(blocking=False):
            return over_capacity()
        try:
            log.info(
                "generate top_p=%s top_k=%s temperature=%s max_new_tokens=%s seed=%s",
                body.top_p, body.top_k, body.temperature, body.max_new_tokens, body.seed,
            )
            try:
                text = backend.generate(
                    body.prompt,
                    top_p=body.top_p,
                    top_k=body.top_k,
                    temperature=body.temperature,
                    max_new_tokens=body.max_new_tokens,
                    seed=body.seed,
                )
            except ValueError as exc:
                return JSONResponse(status_code=400, content={"detail": str(exc)})
            return {"text": text, "model_id": backend.model_id}
        finally:
            capacity.release()

    @app.post("/score")
    def score(body: ScoreRequest):
        if not capacity.acquire(blocking=False):
            return over_capacity()
        try:
            try:
                nll = backend.score(body.context, body.continuation)
            except ValueError as exc:
                return JSONResponse(status_code=400, content={"detail": str(exc)})
            return {"nll": nll}
        finally:
            capacity.release()

    return app
