"""Local chat-completions server for tests: scripted or computed replies, concurrency counters."""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable

class MockChatServer:
    def __init__(self, responder: Callable[[dict], "str | tuple[int, str]"] | None = None,
                 script: Iterable["str | tuple[int, str]"] = (), delay: float = 0.0):
        self._responder = responder
        self._script = deque(script)
        self.delay = delay
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self) -> "MockChatServer":
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._server.shutdown()
        self._server.server_close()

    def _reply(self, body: dict):
        with self._lock:
            if self._script:
                return self._script.popleft()
        if self._responder is None:
            return 500, "no scripted reply left"
        return self._responder(body)

    def _handler(self):
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                with mock._lock:
                    mock.in_flight += 1
                    mock.max_in_flight = max(mock.max_in_flight, mock.in_flight)
                self._counted = True
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    body = json.loads(self.rfile.read(length) or b"{}")
                    with mock._lock:
                        mock.requests.append(body)
                        mock.headers.append(dict(self.headers))
                    if self.path.rstrip("/") != "/v1/chat/completions":
                        self._send(404, {"error": f"unknown path {self.path}"})
                        return
                    if mock.delay:
                        time.sleep(mock.delay)
                    reply = mock._reply(body)
                    status, content = reply if isinstance(reply, tuple) else (200, reply)
                    if status != 200:
                        self._send(status, {"error": content})
                    else:
                        self._send(200, {"id": "mock", "object": "chat.completion", "model": body.get("model"),
                                         "choices": [{"index": 0, "finish_reason": "stop",
                                                      "message": {"role": "assistant", "content": content}}]})
                finally:
                    self._release()

            def _release(self):
                # leave the count before replying: the client may issue its next request
                # as soon as the response bytes arrive
                if self._counted:
                    self._counted = False
                    with mock._lock:
                        mock.in_flight -= 1

            def _send(self, status: int, payload: dict):
                self._release()
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        return Handler
