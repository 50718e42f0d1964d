"""In-process fake light bridge speaking the same wire subset as the real one.

Lets the full physical actuation path run in tests and demos without
hardware: accepts PUT light-state bodies and POST relay webhooks, remembers
every request verbatim (raw body bytes included) and exposes the resulting
light states.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

_LIGHT_PATH = re.compile(r"^/api/([^/]+)/lights/([^/]+)/state$")
_RELAY_PATH = re.compile(r"^/relay/([^/]+)$")


@dataclass
class BridgeRequest:
    method: str
    path: str
    body: str
    received_at: float


class FakeBridge:
    def __init__(self, port: int = 0):
        self.requests: list[BridgeRequest] = []
        self.lights: dict[str, dict] = {}
        self.relays: dict[str, bool] = {}
        self._lock = threading.Lock()
        bridge = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # quiet
                pass

            def _read_body(self) -> str:
                length = int(self.headers.get("Content-Length", "0"))
                return self.rfile.read(length).decode("utf-8")

            def do_PUT(self):
                body = self._read_body()
                m = _LIGHT_PATH.match(self.path)
                with bridge._lock:
                    bridge.requests.append(
                        BridgeRequest("PUT", self.path, body, time.monotonic())
                    )
                if not m:
                    self.send_response(404)
                    self.end_headers()
                    return
                light_id = m.group(2)
                with bridge._lock:
                    state = bridge.lights.setdefault(light_id, {})
                    state.update(json.loads(body))
                payload = json.dumps([{"success": {self.path: True}}]).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_POST(self):
                body = self._read_body()
                m = _RELAY_PATH.match(self.path)
                with bridge._lock:
                    bridge.requests.append(
                        BridgeRequest("POST", self.path, body, time.monotonic())
                    )
                if m:
                    with bridge._lock:
                        bridge.relays[m.group(1)] = bool(json.loads(body).get("on"))
                self.send_response(200)
                self.send_header("Content-Length", "2")
                self.end_headers()
                self.wfile.write(b"ok")

        self._server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "FakeBridge":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def light_bodies(self) -> list[str]:
        with self._lock:
            return [r.body for r in self.requests if r.method == "PUT"]

    def wait_for_requests(self, n: int, timeout_s: float = 5.0) -> bool:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            with self._lock:
                if len(self.requests) >= n:
                    return True
            time.sleep(0.01)
        return False
