"""HTTP+JSON oracle bridge: a running episode blocks inside ask() while a
client polls GET /queries/pending and posts the label back. Trace records and
query lifecycle events fan out on a server-sent-event stream so a console can
follow along. Interactive answers that outwait the timeout fall back to the
configured simulated oracle and are tagged as such."""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse

from .oracle import OracleAnswer, OracleError, OracleQuery, _check_label


class BridgeError(RuntimeError):
    pass


def query_to_json(q: OracleQuery) -> dict:
    return {
        "query_id": q.query_id,
        "kind": q.kind,
        "payload": q.payload,
        "issued_at": q.issued_at,
    }


def _coerce_label(kind: str, raw):
    """JSON label -> the label type the episode expects for this query kind."""
    if kind == "hop_depth":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise OracleError(f"hop_depth label must be an integer, got {raw!r}")
        label: int | bool = int(raw)
    else:
        if not isinstance(raw, bool):
            raise OracleError(f"{kind} label must be a boolean, got {raw!r}")
        label = bool(raw)
    _check_label(kind, label)
    return label


@dataclass
class _Ticket:
    query: OracleQuery
    done: threading.Event = field(default_factory=threading.Event)
    answer: OracleAnswer | None = None


class OracleBridge:
    """One process-wide bridge; thread-safe. Episodes call ask(); the HTTP
    side answers. Port 0 binds an ephemeral port (read .port after start)."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        timeout: float = 120.0,
        fallback=None,
        c_human: float = 0.3,
    ) -> None:
        if timeout <= 0:
            raise BridgeError(f"timeout must be > 0, got {timeout}")
        self.host = host
        self._requested_port = port
        self.timeout = timeout
        self.fallback = fallback
        self.c_human = c_human
        self._lock = threading.Lock()
        self._pending: dict[str, _Ticket] = {}
        self._traces: dict[str, list[dict]] = {}
        self._subscribers: list[queue.Queue] = []
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None
        self._closing = threading.Event()

    # ------------------------------------------------------------ lifecycle

    @property
    def port(self) -> int:
        if self._server is None:
            raise BridgeError("bridge not started")
        return self._server.server_address[1]

    def start(self) -> None:
        if self._server is not None:
            raise BridgeError("bridge already started")
        handler = _make_handler(self)
        try:
            self._server = ThreadingHTTPServer((self.host, self._requested_port), handler)
        except OSError as exc:
            raise BridgeError(f"cannot bind {self.host}:{self._requested_port}: {exc}") from None
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._closing.set()
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def __enter__(self) -> "OracleBridge":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # ------------------------------------------------------- episode facing

    def ask(self, q: OracleQuery) -> OracleAnswer:
        """Block until a client answers or the timeout passes; timeouts fall
        back to the simulated oracle and are tagged interactive-timeout."""
        ticket = _Ticket(query=q)
        with self._lock:
            self._pending[q.query_id] = ticket
        self.publish_event("query", {"query": query_to_json(q)})
        answered = ticket.done.wait(self.timeout)
        with self._lock:
            self._pending.pop(q.query_id, None)
        if answered and ticket.answer is not None:
            ans = ticket.answer
        else:
            if self.fallback is None:
                raise BridgeError(f"query {q.query_id} timed out and no fallback oracle is set")
            sim = self.fallback(q)
            ans = OracleAnswer(
                query_id=sim.query_id, label=sim.label, cost=sim.cost,
                source="interactive-timeout",
            )
        self.publish_event(
            "answer",
            {"query_id": ans.query_id, "label": _json_label(ans.label), "source": ans.source},
        )
        return ans

    def begin_episode(self, episode_id: str) -> None:
        with self._lock:
            self._traces.setdefault(episode_id, [])
        self.publish_event("episode_start", {"episode_id": episode_id})

    def publish_trace(self, episode_id: str, record: dict) -> None:
        with self._lock:
            self._traces.setdefault(episode_id, []).append(record)
        self.publish_event("trace", {"episode_id": episode_id, "record": record})

    def end_episode(self, episode_id: str, summary: dict | None = None) -> None:
        self.publish_event("episode_end", {"episode_id": episode_id, **(summary or {})})

    # ---------------------------------------------------------- HTTP facing

    def pending_queries(self) -> list[dict]:
        with self._lock:
            return [query_to_json(t.query) for t in self._pending.values()]

    def submit_answer(self, query_id: str, raw_label) -> dict:
        with self._lock:
            ticket = self._pending.get(query_id)
        if ticket is None:
            raise KeyError(query_id)
        label = _coerce_label(ticket.query.kind, raw_label)
        ans = OracleAnswer(query_id=query_id, label=label, cost=self.c_human, source="interactive")
        ticket.answer = ans
        ticket.done.set()
        return {"query_id": query_id, "label": _json_label(label), "source": ans.source}

    def trace_of(self, episode_id: str) -> list[dict] | None:
        with self._lock:
            records = self._traces.get(episode_id)
            return None if records is None else list(records)

    def publish_event(self, event: str, body: dict) -> None:
        msg = dict(body)
        msg["event"] = event
        with self._lock:
            subs = list(self._subscribers)
        for q in subs:
            q.put(msg)

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


def _json_label(label):
    return bool(label) if isinstance(label, bool) else int(label)


def _make_handler(bridge: OracleBridge):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args) -> None:  # quiet test output
            pass

        def _json(self, status: int, body) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(data)

        def do_OPTIONS(self) -> None:
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self) -> None:
            path = urlparse(self.path).path.rstrip("/")
            if path == "/queries/pending":
                self._json(200, bridge.pending_queries())
                return
            if path.startswith("/episodes/") and path.endswith("/trace"):
                episode_id = path[len("/episodes/"):-len("/trace")]
                records = bridge.trace_of(episode_id)
                if records is None:
                    self._json(404, {"error": f"unknown episode {episode_id!r}"})
                    return
                body = "".join(json.dumps(r) + "\n" for r in records).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/x-ndjson; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)
                return
            if path == "/events":
                self._stream_events()
                return
            self._json(404, {"error": f"unknown path {self.path!r}"})

        def _stream_events(self) -> None:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream; charset=utf-8")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            sub = bridge.subscribe()
            try:
                while not bridge._closing.is_set():
                    try:
                        msg = sub.get(timeout=0.25)
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    data = json.dumps(msg)
                    self.wfile.write(f"data: {data}\n\n".encode("utf-8"))
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                bridge.unsubscribe(sub)

        def do_POST(self) -> None:
            path = urlparse(self.path).path.rstrip("/")
            if path.startswith("/queries/") and path.endswith("/answer"):
                query_id = path[len("/queries/"):-len("/answer")]
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._json(400, {"error": "body is not valid JSON"})
                    return
                if not isinstance(body, dict) or "label" not in body:
                    self._json(400, {"error": "body must be a JSON object with a 'label' key"})
                    return
                try:
                    ack = bridge.submit_answer(query_id, body["label"])
                except KeyError:
                    self._json(404, {"error": f"no pending query {query_id!r}"})
                    return
                except OracleError as exc:
                    self._json(400, {"error": str(exc)})
                    return
                self._json(200, ack)
                return
            self._json(404, {"error": f"unknown path {self.path!r}"})

    return Handler
