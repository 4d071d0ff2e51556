"""JSON-over-HTTP service around one hot-swappable model bundle."""
from __future__ import annotations

import json
import logging
import sys
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .corpus import TicketRecord
from .dashboard import build_feed
from .engine import ModelBundle, PredictionLogger, drift_score, knn_similar, load_bundle, predict
from .errors import ResolvRecError, TooFewRecentError

log = logging.getLogger(__name__)

MAX_BODY = 8 << 20


class HttpError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass
class ServiceState:
    """Holds the live bundle. Handlers read ``bundle`` once per request; reload
    replaces the reference in one assignment, so a request sees exactly one bundle."""

    bundle: ModelBundle
    logger: PredictionLogger | None = None
    drift_trace: list = field(default_factory=list)
    _reload_lock: threading.Lock = field(default_factory=threading.Lock)

    def reload(self, path: str) -> ModelBundle:
        with self._reload_lock:
            fresh = load_bundle(path)  # built off to the side
            self.bundle = fresh
            return fresh


def _ticket(body: Any, default_id: str = "<request>") -> TicketRecord:
    if isinstance(body, str):
        body = {"description": body}
    if not isinstance(body, dict):
        raise HttpError(400, "ticket must be a JSON object or string")
    desc = body.get("description")
    if not isinstance(desc, str):
        raise HttpError(400, "field 'description' (string) is required")
    if not desc.strip():
        raise HttpError(422, "description is empty")
    iid = body.get("incident_id")
    if iid is not None and (not isinstance(iid, str) or not iid):
        raise HttpError(400, "field 'incident_id' must be a non-empty string")
    return TicketRecord(iid or default_id, desc)


class Handler(BaseHTTPRequestHandler):
    server_version = "resolvrec/1"
    protocol_version = "HTTP/1.1"

    @property
    def state(self) -> ServiceState:
        return self.server.state

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, code: int, payload: Any) -> None:
        data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
        self.wfile.flush()

    def _error(self, code: int, message: str) -> None:
        self._send(code, {"error": {"code": code, "message": message}})

    def _body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise HttpError(413, "request body too large")
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HttpError(400, f"malformed JSON: {exc}") from None

    def _dispatch(self, method: str) -> None:
        routes = {
            ("GET", "/v1/health"): self.health,
            ("GET", "/v1/metrics"): self.metrics,
            ("POST", "/v1/predict"): self.predict,
            ("POST", "/v1/similar"): self.similar,
            ("POST", "/v1/drift"): self.drift,
            ("POST", "/v1/reload"): self.reload,
        }
        path = self.path.split("?", 1)[0]
        handler = routes.get((method, path))
        after = None
        try:
            if handler is None:
                if any(p == path for _, p in routes):
                    raise HttpError(405, f"{method} not allowed on {path}")
                raise HttpError(404, f"no route {path}")
            result = handler()
            if isinstance(result, tuple):
                result, after = result
            self._send(200, result)
        except HttpError as exc:
            self._error(exc.code, exc.message)
        except ResolvRecError as exc:  # domain errors, e.g. an invalid ticket
            self._error(422, str(exc))
        except Exception as exc:  # keep the worker alive
            log.exception("unhandled error")
            self._error(500, f"internal error: {type(exc).__name__}")
        if after is not None:
            # logged after the response; a log failure never blocks a prediction
            try:
                after()
            except Exception as exc:
                print(f"prediction log write failed: {exc}", file=sys.stderr)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    # ---- endpoints ----

    def health(self):
        return {"status": "ok", "bundle_version": self.state.bundle.bundle_version}

    def metrics(self):
        bundle = self.state.bundle
        report = bundle.summary.get("holdout")
        if report is None:
            raise HttpError(409, "bundle carries no evaluation (trained without a test split)")
        return build_feed(bundle, report, drift_trace=list(self.state.drift_trace))

    def predict(self):
        bundle = self.state.bundle
        started = time.perf_counter()
        ticket = _ticket(self._body())
        result = predict(bundle, ticket)
        latency = (time.perf_counter() - started) * 1000.0
        logger = self.state.logger
        after = (lambda: logger.log(result, latency)) if logger is not None else None
        return result.to_dict(), after

    def similar(self):
        bundle = self.state.bundle
        body = self._body()
        ticket = _ticket(body)
        k = body.get("k") if isinstance(body, dict) else None
        if k is not None and (not isinstance(k, int) or isinstance(k, bool) or k < 1):
            raise HttpError(400, "field 'k' must be a positive integer")
        neighbors = knn_similar(bundle, ticket, k)
        return {
            "neighbors": [{"incident_id": n.incident_id, "similarity": n.similarity,
                           "resolution_text": n.resolution_text} for n in neighbors],
            "bundle_version": bundle.bundle_version,
        }

    def drift(self):
        bundle = self.state.bundle
        body = self._body()
        if not isinstance(body, dict) or not isinstance(body.get("tickets"), list):
            raise HttpError(400, "field 'tickets' (array) is required")
        tickets = []
        for i, t in enumerate(body["tickets"]):
            try:
                tickets.append(_ticket(t, default_id=f"<recent-{i}>"))
            except HttpError as exc:
                raise HttpError(exc.code, f"tickets[{i}]: {exc.message}") from None
        try:
            report = drift_score(bundle, tickets)
        except TooFewRecentError as exc:
            raise HttpError(422, str(exc)) from None
        self.state.drift_trace.append(report)
        return report.to_dict()

    def reload(self):
        body = self._body()
        path = body.get("bundle_path") if isinstance(body, dict) else None
        if not isinstance(path, str) or not path:
            raise HttpError(400, "field 'bundle_path' (string) is required")
        old = self.state.bundle.bundle_version
        try:
            fresh = self.state.reload(path)
        except (OSError, ResolvRecError, ValueError, KeyError) as exc:
            raise HttpError(409, f"reload failed, still serving {old}: {exc}") from None
        return {"status": "ok", "previous_version": old, "bundle_version": fresh.bundle_version}


class Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, state: ServiceState):
        super().__init__(address, Handler)
        self.state = state


def make_server(bundle: ModelBundle, host: str = "127.0.0.1", port: int = 8080,
                log_path: str | None = None) -> Server:
    """A bound, not yet serving, server; port 0 picks a free port."""
    logger = PredictionLogger(log_path) if log_path else None
    return Server((host, port), ServiceState(bundle, logger))


def serve(bundle_path: str, host: str = "127.0.0.1", port: int = 8080, log_path: str | None = None) -> None:
    server = make_server(load_bundle(bundle_path), host, port, log_path)
    print(f"serving {server.state.bundle.bundle_version} on http://{host}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        if server.state.logger is not None:
            server.state.logger.close()
