"""HTTP + server-sent-events facade over one orchestrator.

All state access is message passing: HTTP handler threads enqueue
closures that the orchestrator's own thread executes between simulation
ticks (and while blocked on an interactive checkpoint), so the single
owner of mutable state never races a reader.  GET /stream replays the
run log so far, then follows it live.
"""

from __future__ import annotations

import json
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .events import event_from_obj
from .orchestrator import Orchestrator, compute_trigger_stats
from .world import compute_metrics

CALL_TIMEOUT_S = 30.0


class ServiceError(Exception):
    pass


class OrchestratorService:
    def __init__(self, orch: Orchestrator):
        self.orch = orch
        self.commands: "queue.Queue" = queue.Queue()
        self._decisions: dict[int, dict] = {}
        self._run_requested = threading.Event()
        self._stop = threading.Event()
        self._finished = threading.Event()
        orch._decision_ready = self._poll_decision
        orch._drain_hook = self.drain

    # -- executed on the orchestrator thread --------------------------------

    def _poll_decision(self) -> Optional[dict]:
        pending = self.orch.pending_checkpoint
        if pending is None:
            return None
        return self._decisions.pop(pending.checkpoint_id, None)

    def drain(self) -> None:
        while True:
            try:
                fn, reply = self.commands.get_nowait()
            except queue.Empty:
                return
            try:
                reply.put(("ok", fn()))
            except Exception as exc:  # surfaced to the HTTP caller
                reply.put(("err", exc))

    def worker(self) -> None:
        """Own the orchestrator: serve commands, run when requested."""
        while not self._stop.is_set():
            if self._run_requested.is_set() and not self._finished.is_set():
                self.orch.run()
                self._finished.set()
            self.drain()
            self._stop.wait(0.01)

    # -- called from HTTP handler threads ------------------------------------

    def call(self, fn, timeout: float = CALL_TIMEOUT_S):
        reply: "queue.Queue" = queue.Queue(1)
        self.commands.put((fn, reply))
        try:
            status, value = reply.get(timeout=timeout)
        except queue.Empty:
            raise ServiceError("orchestrator did not answer in time")
        if status == "err":
            raise value
        return value

    def request_run(self) -> bool:
        if self._run_requested.is_set():
            return False
        self._run_requested.set()
        return True

    def post_decision(self, payload: dict) -> bool:
        checkpoint_id = payload.get("checkpoint_id")
        if not isinstance(checkpoint_id, int):
            raise ServiceError("decision needs an integer checkpoint_id")
        pending = self.orch.pending_checkpoint
        if pending is None or pending.checkpoint_id != checkpoint_id:
            return False
        self._decisions[checkpoint_id] = payload
        return True

    def stop(self) -> None:
        self._stop.set()


def _build_handler(service: OrchestratorService):
    orch = service.orch

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _send_json(self, obj, status=200):
            body = json.dumps(obj, sort_keys=True).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            return json.loads(self.rfile.read(length).decode("utf-8"))

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            try:
                if self.path == "/state":
                    self._send_json(service.call(orch.state_obj))
                elif self.path == "/poset":
                    self._send_json(service.call(orch.poset_obj))
                elif self.path == "/layered":
                    self._send_json(service.call(lambda: orch.layered.to_obj()))
                elif self.path == "/plan":
                    self._send_json(service.call(lambda: orch.plan.to_obj()))
                elif self.path == "/metrics":
                    self._send_json(
                        service.call(
                            lambda: compute_metrics(
                                orch.log.records, orch.sim.gt
                            ).to_obj()
                        )
                    )
                elif self.path == "/stats":
                    self._send_json(
                        service.call(
                            lambda: compute_trigger_stats(orch.log.records).to_obj()
                        )
                    )
                elif self.path == "/checkpoints":
                    self._send_json(service.call(self._pending_checkpoints))
                elif self.path == "/stream":
                    self._stream()
                else:
                    self._send_json({"error": "not found"}, 404)
            except BrokenPipeError:
                pass
            except Exception as exc:
                self._send_json({"error": str(exc)}, 500)

        @staticmethod
        def _pending_checkpoints():
            pending = orch.pending_checkpoint
            if pending is None:
                return {"pending": []}
            return {
                "pending": [
                    {
                        "checkpoint_id": pending.checkpoint_id,
                        "stage": pending.stage,
                        "artifact": pending.artifact,
                        "violations": pending.violations,
                    }
                ]
            }

        def _stream(self):
            feed: "queue.Queue" = queue.Queue()

            def on_record(record):
                feed.put(record)

            backlog = service.call(
                lambda: (list(orch.log.records), orch.log.subscribe(on_record))
            )[0]
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            try:
                for record in backlog:
                    self._write_sse(record)
                while not service._stop.is_set():
                    try:
                        record = feed.get(timeout=0.5)
                    except queue.Empty:
                        continue
                    self._write_sse(record)
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                service.call(lambda: orch.log.unsubscribe(on_record))

        def _write_sse(self, record):
            data = json.dumps(record, sort_keys=True)
            self.wfile.write(f"data: {data}\n\n".encode("utf-8"))
            self.wfile.flush()

        def do_POST(self):
            try:
                payload = self._read_json()
                if self.path == "/events":
                    event = event_from_obj(payload)
                    service.call(lambda: orch.inject(event))
                    self._send_json({"accepted": True}, 202)
                elif self.path == "/decisions":
                    if service.post_decision(payload):
                        self._send_json({"accepted": True})
                    else:
                        self._send_json(
                            {"error": "no matching pending checkpoint"}, 404
                        )
                elif self.path == "/run":
                    started = service.request_run()
                    self._send_json({"started": started}, 202 if started else 409)
                else:
                    self._send_json({"error": "not found"}, 404)
            except ValueError as exc:
                self._send_json({"error": str(exc)}, 400)
            except Exception as exc:
                self._send_json({"error": str(exc)}, 500)

    return Handler


def serve(service: OrchestratorService, address: str) -> ThreadingHTTPServer:
    """Bind and serve in a daemon thread; returns the server handle."""
    host, _, port = address.partition(":")
    server = ThreadingHTTPServer((host or "127.0.0.1", int(port or 0)), _build_handler(service))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
