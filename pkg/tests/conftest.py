"""Shared fixtures: a scriptable fake chat-completions server."""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


def completion_body(content: str, prompt_tokens: int = 10, completion_tokens: int = 5) -> dict:
    return {
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


@dataclass
class FakeServerState:
    """Scripted response queue plus concurrency instrumentation."""

    script: deque = field(default_factory=deque)  # (status, body_dict) pairs
    default: tuple = (200, None)  # None -> completion body echoing "ok"
    delay_s: float = 0.0
    requests: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    in_flight: int = 0
    high_water: int = 0

    def next_response(self) -> tuple:
        with self.lock:
            if self.script:
                return self.script.popleft()
        status, body = self.default
        return status, body


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API)
        state: FakeServerState = self.server.state  # type: ignore[attr-defined]
        with state.lock:
            state.in_flight += 1
            state.high_water = max(state.high_water, state.in_flight)
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length) if length else b"{}"
            with state.lock:
                state.requests.append(
                    {
                        "path": self.path,
                        "auth": self.headers.get("Authorization", ""),
                        "body": json.loads(raw.decode("utf-8")),
                    }
                )
            if state.delay_s:
                time.sleep(state.delay_s)
            status, body = state.next_response()
            if body is None:
                body = completion_body("ok")
            blob = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)
        finally:
            with state.lock:
                state.in_flight -= 1

    def log_message(self, *args):  # quiet
        pass


@pytest.fixture
def fake_llm_server():
    state = FakeServerState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.state = state  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}", state
    finally:
        server.shutdown()
        thread.join(timeout=5)
