"""HTTP surface: a FastAPI app exposing the command handlers.

Domain errors become JSON bodies {"error": {"kind", "message"}} with
status 400, except AllFramesFailed which maps to 422 (the request was
well-formed; the study itself yielded nothing).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import AllFramesFailed, FetalBiometryError
from ..pipeline import REPORT_SCHEMA
from ..version import __version__
from . import handlers
from .models import (
    AgreeRequest,
    AgreeResponse,
    AnalyzeRequest,
    AnalyzeResponse,
    EvaluateRequest,
    EvaluateResponse,
    PhantomRequest,
    PhantomResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="fetal-biometry", version=__version__)

    @app.exception_handler(FetalBiometryError)
    async def domain_error(request: Request, exc: FetalBiometryError) -> JSONResponse:
        status = 422 if isinstance(exc, AllFramesFailed) else 400
        return JSONResponse(
            status_code=status,
            content={"error": {"kind": exc.kind, "message": str(exc)}},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__, "schema": REPORT_SCHEMA}

    @app.post("/analyze")
    def analyze(req: AnalyzeRequest) -> AnalyzeResponse:
        return handlers.handle_analyze(req)

    @app.post("/phantom")
    def phantom(req: PhantomRequest) -> PhantomResponse:
        return handlers.handle_phantom(req)

    @app.post("/agree")
    def agree(req: AgreeRequest) -> AgreeResponse:
        return handlers.handle_agree(req)

    @app.post("/evaluate")
    def evaluate(req: EvaluateRequest) -> EvaluateResponse:
        return handlers.handle_evaluate(req)

    return app
