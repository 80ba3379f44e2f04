"""Live proctoring service over newline-delimited JSON.

Protocol (one JSON object per line, one reply per request)::

    -> {"kind": "connect",   "session_id": "...", "ip": "a.b.c.d"}
    <- {"status": "ok", "decision": {"session_id", "set_id", "kind"}}
    -> {"kind": "heartbeat", "session_id": "...", "ip": "a.b.c.d"}
    <- {"status": "ok"}                      (or a Reassignment decision)
    -> {"kind": "submit",    "session_id": "...", "ip": "a.b.c.d", "record": {...}}
    <- {"status": "ok", "verdict": "Normal"|"Abnormal", "confidence": p, "decision"?: {...}}
    -> {"kind": "subscribe"}
    <- {"status": "ok"} then one {"alert": {...}} line per alert, until disconnect

Failures come back as ``{"status": "error", "error": {"type", "message"}}``
with type one of BadRequest, OutOfOrder, DuplicateSession, InternalError.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Callable, Iterable, Mapping

import numpy as np

from .encoding import BehaviorLabel, SpeedModel, encode
from .ipagent import DecisionKind, IpRegistry, SessionDecision
from .models import Network, classify
from .records import ExamRecord, ExamSpec, RecordError

log = logging.getLogger(__name__)

Detector = Callable[[np.ndarray], "tuple[BehaviorLabel, float]"]


class ProtocolError(Exception):
    type = "ProtocolError"


class BadRequest(ProtocolError):
    type = "BadRequest"


class OutOfOrder(ProtocolError):
    type = "OutOfOrder"


class DuplicateSession(ProtocolError):
    type = "DuplicateSession"


class AlertCause(str, Enum):
    IP_CHANGE = "IpChange"
    REPEAT_IP = "RepeatIp"
    ABNORMAL = "AbnormalBehavior"


@dataclass(frozen=True)
class Alert:
    ts: float
    session_id: str
    ip: str
    cause: AlertCause
    confidence: float | None = None
    action: SessionDecision | None = None

    def to_dict(self) -> dict:
        return {
            "ts": self.ts,
            "session_id": self.session_id,
            "ip": self.ip,
            "cause": self.cause.value,
            "confidence": self.confidence,
            "action": self.action.to_dict() if self.action else None,
        }


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    set_pool: list[str] = field(default_factory=lambda: ["A", "B", "C", "D"])
    seed: int = 0
    alert_log: str | None = None
    event_log: str | None = None
    max_line_bytes: int = 1 << 16

    @classmethod
    def from_dict(cls, d: Mapping) -> "ServiceConfig":
        return cls(**d)


def model_detector(model: Network) -> Detector:
    def detect(features: np.ndarray):
        return classify(model, features)

    return detect


@dataclass
class _Session:
    ip: str
    submitted: bool = False


class ProctorService:
    """Transport-free core: :meth:`handle` maps one request dict to one reply dict.

    Every accepted request is appended to ``event_log`` with the timestamp it
    was processed at, so :func:`replay` can rebuild the exact alert stream.
    """

    def __init__(
        self,
        detector: Detector,
        spec: ExamSpec | None = None,
        speed_model: SpeedModel | None = None,
        set_pool=("A", "B", "C", "D"),
        seed: int = 0,
        clock: Callable[[], float] = time.time,
        alert_log: IO[str] | None = None,
        event_log: IO[str] | None = None,
    ):
        self.spec = spec or ExamSpec.default()
        self.speed_model = speed_model or SpeedModel()
        self.detector = detector
        self._clock = clock
        self._now = 0.0
        self.registry = IpRegistry(set_pool, clock=lambda: self._now)
        self.rng = np.random.default_rng(seed)
        self.sessions: dict[str, _Session] = {}
        self.alerts: list[Alert] = []
        self._alert_log = alert_log
        self._event_log = event_log
        self._subscribers: list[Callable[[Alert], None]] = []
        self._lock = threading.Lock()

    def subscribe(self, callback: Callable[[Alert], None]) -> Callable[[], None]:
        self._subscribers.append(callback)
        return lambda: self._subscribers.remove(callback)

    def handle(self, request, ts: float | None = None) -> dict:
        """Process one request; never raises."""
        with self._lock:
            self._now = self._clock() if ts is None else ts
            try:
                reply = self._dispatch(request)
            except ProtocolError as exc:
                return {"status": "error", "error": {"type": exc.type, "message": str(exc)}}
            except Exception as exc:  # the service must survive anything a client sends
                log.exception("unhandled error on request")
                return {"status": "error", "error": {"type": "InternalError", "message": str(exc)}}
            if self._event_log is not None:
                self._event_log.write(json.dumps({"ts": self._now, "request": request}) + "\n")
                self._event_log.flush()
            return reply

    def _dispatch(self, request) -> dict:
        if not isinstance(request, dict):
            raise BadRequest("request must be a JSON object")
        kind = request.get("kind")
        handler = {"connect": self._connect, "submit": self._submit, "heartbeat": self._heartbeat}.get(kind)
        if handler is None:
            raise BadRequest(f"unknown kind {kind!r}")
        session_id, ip = request.get("session_id"), request.get("ip")
        if not isinstance(session_id, str) or not session_id:
            raise BadRequest("session_id must be a non-empty string")
        if not isinstance(ip, str) or not ip:
            raise BadRequest("ip must be a non-empty string")
        return handler(session_id, ip, request)

    def _connect(self, session_id: str, ip: str, request: dict) -> dict:
        if session_id in self.sessions:
            raise DuplicateSession(f"session {session_id!r} already connected")
        decision = self.registry.register(ip, self.rng, session_id)
        self.sessions[session_id] = _Session(ip)
        if decision.kind is DecisionKind.SPECIFIC:
            self._alert(session_id, ip, AlertCause.REPEAT_IP, action=decision)
        return {"status": "ok", "decision": decision.to_dict()}

    def _known(self, session_id: str) -> _Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise OutOfOrder(f"session {session_id!r} has not connected")
        if session.submitted:
            raise OutOfOrder(f"session {session_id!r} already submitted")
        return session

    def _ip_changed(self, session_id: str, session: _Session, ip: str) -> dict | None:
        if ip == session.ip:
            return None
        decision = self.registry.flag_abnormal(session_id, self.rng)
        self._alert(session_id, ip, AlertCause.IP_CHANGE, action=decision)
        return decision.to_dict()

    def _heartbeat(self, session_id: str, ip: str, request: dict) -> dict:
        session = self._known(session_id)
        decision = self._ip_changed(session_id, session, ip)
        return {"status": "ok", "decision": decision} if decision else {"status": "ok"}

    def _submit(self, session_id: str, ip: str, request: dict) -> dict:
        session = self._known(session_id)
        payload = request.get("record")
        if not isinstance(payload, dict):
            raise BadRequest("submit needs a record object")
        try:
            record = ExamRecord.from_dict(payload)
            features = encode(record, self.spec, self.speed_model)
        except (RecordError, KeyError, TypeError, ValueError) as exc:
            raise BadRequest(f"invalid record: {exc}") from None
        changed = self._ip_changed(session_id, session, ip)
        verdict, confidence = self.detector(features)
        session.submitted = True
        reply = {"status": "ok", "verdict": verdict.name.capitalize(), "confidence": float(confidence)}
        if changed:
            reply["decision"] = changed
        elif verdict is BehaviorLabel.ABNORMAL:
            decision = self.registry.flag_abnormal(session_id, self.rng)
            self._alert(session_id, ip, AlertCause.ABNORMAL, float(confidence), decision)
            reply["decision"] = decision.to_dict()
        return reply

    def _alert(self, session_id, ip, cause, confidence=None, action=None) -> None:
        alert = Alert(self._now, session_id, ip, cause, confidence, action)
        self.alerts.append(alert)
        if self._alert_log is not None:
            self._alert_log.write(json.dumps(alert.to_dict()) + "\n")
            self._alert_log.flush()
        for callback in list(self._subscribers):
            try:
                callback(alert)
            except Exception:
                log.exception("alert subscriber failed")


def read_events(fh: IO[str]) -> list[tuple[float, dict]]:
    return [(e["ts"], e["request"]) for e in map(json.loads, filter(str.strip, fh))]


def replay(events: Iterable[tuple[float, dict]], service: ProctorService) -> list[Alert]:
    """Feed recorded ``(ts, request)`` pairs through a fresh service."""
    for ts, request in events:
        service.handle(request, ts=ts)
    return service.alerts


def _encode(obj: dict) -> bytes:
    return (json.dumps(obj) + "\n").encode()


class ProctorServer:
    """asyncio TCP front end; one request line in, one reply line out."""

    def __init__(self, service: ProctorService, host: str = "127.0.0.1", port: int = 0, max_line_bytes: int = 1 << 16):
        self.service = service
        self.host, self.port = host, port
        self.max_line_bytes = max_line_bytes
        self._server: asyncio.base_events.Server | None = None

    async def start(self) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._client, self.host, self.port, limit=self.max_line_bytes)
        self.host, self.port = self._server.sockets[0].getsockname()[:2]
        log.info("listening on %s:%d", self.host, self.port)
        return self.host, self.port

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _client(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                try:
                    line = await reader.readline()
                except (asyncio.LimitOverrunError, ValueError):
                    writer.write(_encode({"status": "error", "error": {"type": "BadRequest", "message": "line too long"}}))
                    await writer.drain()
                    break
                if not line:
                    break
                if not line.strip():
                    continue
                try:
                    request = json.loads(line)
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    reply = {"status": "error", "error": {"type": "BadRequest", "message": f"bad JSON: {exc}"}}
                else:
                    if isinstance(request, dict) and request.get("kind") == "subscribe":
                        await self._stream_alerts(reader, writer)
                        break
                    reply = self.service.handle(request)
                writer.write(_encode(reply))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def _stream_alerts(self, reader, writer) -> None:
        queue: asyncio.Queue = asyncio.Queue()
        unsubscribe = self.service.subscribe(queue.put_nowait)
        try:
            writer.write(_encode({"status": "ok"}))
            await writer.drain()
            closed = asyncio.ensure_future(reader.read())
            while True:
                getter = asyncio.ensure_future(queue.get())
                done, _ = await asyncio.wait({getter, closed}, return_when=asyncio.FIRST_COMPLETED)
                if getter not in done:
                    getter.cancel()
                    break
                writer.write(_encode({"alert": getter.result().to_dict()}))
                await writer.drain()
        finally:
            unsubscribe()
