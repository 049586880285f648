"""Mock inference backend.

Stands in for real model-serving nodes: answers /infer after a configured
delay with a configured confidence, or replays a trace keyed by request id
so that end-to-end gateway runs are reproducible. Honors explicit
cancellation: a canceled request aborts its sleep, bills only the time it
actually spent, logs the abort, and never delivers a result.
"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .trace import Trace


@dataclass(frozen=True)
class VersionProfile:
    latency_ms: float
    confidence: float
    error: float = 0.0


@dataclass
class BackendConfig:
    profiles: dict[int, VersionProfile] = field(default_factory=dict)
    replay: Trace | None = None

    def __post_init__(self):
        if not self.profiles and self.replay is None:
            raise ValueError("backend needs version profiles or a replay trace")


class _Inflight:
    __slots__ = ("version", "start", "server_ms", "event", "billed_ms", "canceled")

    def __init__(self, version, start, server_ms):
        self.version = version
        self.start = start
        self.server_ms = server_ms
        self.event = asyncio.Event()
        self.billed_ms = 0.0
        self.canceled = False


class BackendState:
    def __init__(self, config: BackendConfig):
        self.config = config
        self.by_id = (
            {rec.id: rec for rec in config.replay.records} if config.replay else {}
        )
        self.inflight: dict[str, list[_Inflight]] = {}
        self.abort_log: list[dict] = []
        self.completed = 0

    def lookup(self, rid: str, version: int):
        """(server_ms, confidence, error, result) for one request."""
        if self.config.replay is not None:
            rec = self.by_id.get(rid)
            if rec is None:
                return None
            out = rec.outcome(version)
            return (
                out.server_ms,
                out.confidence,
                out.error,
                f"replay:{rid}:v{version}",
            )
        prof = self.config.profiles.get(version)
        if prof is None:
            return None
        return prof.latency_ms, prof.confidence, prof.error, f"profile:v{version}"


def create_backend_app(config: BackendConfig) -> FastAPI:
    app = FastAPI()
    state = BackendState(config)
    app.state.backend = state

    @app.post("/infer")
    async def infer(request: Request):
        rid = request.headers.get("Request-Id")
        version_raw = request.headers.get("Version")
        if rid is None or version_raw is None:
            return JSONResponse(
                {"detail": "Version and Request-Id headers required"}, status_code=400
            )
        try:
            version = int(version_raw)
        except ValueError:
            return JSONResponse(
                {"detail": f"bad Version header {version_raw!r}"}, status_code=400
            )
        looked_up = state.lookup(rid, version)
        if looked_up is None:
            return JSONResponse(
                {"detail": f"unknown request id or version for {rid!r}"},
                status_code=404,
            )
        server_ms, confidence, error, result = looked_up

        loop = asyncio.get_running_loop()
        entry = _Inflight(version, loop.time(), server_ms)
        state.inflight.setdefault(rid, []).append(entry)
        sleeper = asyncio.ensure_future(asyncio.sleep(server_ms / 1000.0))
        canceler = asyncio.ensure_future(entry.event.wait())
        try:
            await asyncio.wait(
                {sleeper, canceler}, return_when=asyncio.FIRST_COMPLETED
            )
        finally:
            sleeper.cancel()
            canceler.cancel()
            entries = state.inflight.get(rid)
            if entries is not None:
                entries.remove(entry)
                if not entries:
                    del state.inflight[rid]

        if entry.canceled:
            state.abort_log.append(
                {"request_id": rid, "version": version, "billed_ms": entry.billed_ms}
            )
            return JSONResponse(
                {"canceled": True, "request_id": rid, "billed_ms": entry.billed_ms}
            )
        state.completed += 1
        return JSONResponse(
            {
                "result": result,
                "confidence": confidence,
                "error": error,
                "server_ms": server_ms,
                "version": version,
            }
        )

    @app.post("/cancel/{rid}")
    async def cancel(rid: str):
        entries = state.inflight.get(rid)
        if not entries:
            return JSONResponse(
                {"canceled": False, "billed_ms": 0.0}, status_code=404
            )
        loop = asyncio.get_running_loop()
        billed = 0.0
        for entry in list(entries):
            if entry.canceled:
                continue
            entry.billed_ms = min(
                entry.server_ms, (loop.time() - entry.start) * 1000.0
            )
            entry.canceled = True
            entry.event.set()
            billed += entry.billed_ms
        return {"canceled": True, "billed_ms": billed}

    @app.get("/aborts")
    async def aborts():
        return {"aborts": state.abort_log}

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "inflight": len(state.inflight), "completed": state.completed}

    return app
