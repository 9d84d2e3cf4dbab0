"""JSON-over-HTTP facade for sequential sessions.

Thin by construction: every endpoint body is parsed by hand into plain
values, handed to the operations in `store`, and every package error is
translated to one envelope shape {code, message, detail} with a status
code chosen by error class.  No behavior lives here that the library
cannot reproduce.

Run with `allocrisk-service` or `python -m allocrisk.service`.  When a
built web UI is present (frontend/dist next to the package checkout, or
the ALLOCRISK_UI_DIR environment variable) it is served at /.
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .errors import (
    AllocRiskError,
    AlreadyScored,
    InvalidPrior,
    NotPositiveDefinite,
    ParseError,
    RevisionConflict,
    SchurNotDiagonal,
    UnknownBatch,
    UnknownSession,
)
from .store import SessionStore, op_audit, op_batch, op_open, op_outcomes

__all__ = ["create_app", "main"]


def _status_for(exc: AllocRiskError) -> int:
    if isinstance(exc, (RevisionConflict, AlreadyScored)):
        return 409
    if isinstance(exc, (UnknownSession, UnknownBatch)):
        return 404
    if isinstance(exc, (ParseError, InvalidPrior, NotPositiveDefinite, SchurNotDiagonal)):
        return 400
    return 422


def _error_response(exc: AllocRiskError) -> JSONResponse:
    return JSONResponse(
        status_code=_status_for(exc),
        content={"code": exc.code, "message": str(exc), "detail": None},
    )


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception as exc:
        raise ParseError(f"request body is not valid JSON: {exc}") from None
    if not isinstance(body, dict):
        raise ParseError("request body must be a JSON object")
    return body


def _int_field(body: dict, name: str) -> int:
    value = body.get(name)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{name!r} must be an integer")
    return value


def _quota_field(body: dict) -> "tuple[int, int] | None":
    quota = body.get("quota")
    if quota is None:
        return None
    if (
        not isinstance(quota, (list, tuple))
        or len(quota) != 2
        or any(not isinstance(v, int) or isinstance(v, bool) for v in quota)
    ):
        raise ParseError("'quota' must be a pair of integers [m_c, m_t]")
    return (quota[0], quota[1])


def default_ui_dir() -> Path | None:
    env = os.environ.get("ALLOCRISK_UI_DIR")
    if env:
        return Path(env)
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


def create_app(data_dir: "str | Path", ui_dir: "str | Path | None" = None) -> FastAPI:
    store = SessionStore(data_dir)
    app = FastAPI(title="allocrisk service", version=__version__)

    @app.get("/api/health")
    async def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/sessions")
    async def create_session(request: Request) -> JSONResponse:
        try:
            body = await _json_body(request)
            prior_doc = body.get("prior")
            if not isinstance(prior_doc, dict):
                raise ParseError("'prior' must be a JSON object")
            out = op_open(store, prior_doc, _int_field(body, "p"))
            return JSONResponse(status_code=201, content=out)
        except AllocRiskError as exc:
            return _error_response(exc)

    @app.post("/sessions/{session_id}/batches")
    async def submit_batch(session_id: str, request: Request) -> JSONResponse:
        try:
            body = await _json_body(request)
            covariates = body.get("covariates")
            if covariates is None:
                raise ParseError("body is missing 'covariates'")
            mode = body.get("mode")
            if mode is not None and not isinstance(mode, str):
                raise ParseError("'mode' must be a string")
            rng_seed = body.get("rng_seed", 0)
            if not isinstance(rng_seed, int) or isinstance(rng_seed, bool):
                raise ParseError("'rng_seed' must be an integer")
            out = op_batch(
                store,
                session_id,
                covariates,
                expected_revision=_int_field(body, "expected_revision"),
                quota=_quota_field(body),
                mode=mode,
                rng_seed=rng_seed,
            )
            return JSONResponse(status_code=200, content=out)
        except AllocRiskError as exc:
            return _error_response(exc)

    @app.post("/sessions/{session_id}/outcomes")
    async def submit_outcomes(session_id: str, request: Request) -> JSONResponse:
        try:
            body = await _json_body(request)
            y = body.get("y")
            if y is None:
                raise ParseError("body is missing 'y'")
            batch_index = body.get("batch_index")
            if batch_index is not None and (
                not isinstance(batch_index, int) or isinstance(batch_index, bool)
            ):
                raise ParseError("'batch_index' must be an integer")
            out = op_outcomes(
                store,
                session_id,
                y,
                expected_revision=_int_field(body, "expected_revision"),
                batch_index=batch_index,
            )
            return JSONResponse(status_code=200, content=out)
        except AllocRiskError as exc:
            return _error_response(exc)

    @app.get("/sessions/{session_id}")
    async def read_session(session_id: str) -> JSONResponse:
        try:
            return JSONResponse(status_code=200, content=op_audit(store, session_id))
        except AllocRiskError as exc:
            return _error_response(exc)

    resolved_ui = Path(ui_dir) if ui_dir is not None else default_ui_dir()
    if resolved_ui is not None and resolved_ui.is_dir():
        app.mount("/", StaticFiles(directory=resolved_ui, html=True), name="ui")
    return app


def main(argv: "list[str] | None" = None) -> int:
    parser = argparse.ArgumentParser(
        prog="allocrisk-service",
        description="HTTP service for sequential treatment/control allocation",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument(
        "--data-dir",
        default="./allocrisk-data",
        help="directory holding one JSON file per session",
    )
    parser.add_argument(
        "--ui-dir", default=None, help="built web UI directory to serve at /"
    )
    args = parser.parse_args(argv)

    import uvicorn

    uvicorn.run(
        create_app(args.data_dir, args.ui_dir), host=args.host, port=args.port
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
