"""Minimal threaded HTTP layer shared by all loopback services.

Handlers receive (match, query, body) and return (status, content_type,
body_bytes). Services stay libraries; this wrapper only does routing and
transport framing, so the same cores run in-process in tests.
"""

from __future__ import annotations

import json
import re
import socket
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

Handler = Callable[[re.Match, dict[str, str], bytes], tuple[int, str, bytes]]


def json_response(obj: Any, status: int = 200) -> tuple[int, str, bytes]:
    return status, "application/json", json.dumps(obj).encode("utf-8")


class Router:
    def __init__(self) -> None:
        self._routes: list[tuple[str, re.Pattern, Handler]] = []

    def add(self, method: str, pattern: str, handler: Handler) -> None:
        self._routes.append((method, re.compile(f"^{pattern}$"), handler))

    def dispatch(self, method: str, path: str, query: dict[str, str],
                 body: bytes) -> tuple[int, str, bytes]:
        for route_method, regex, handler in self._routes:
            if route_method != method:
                continue
            match = regex.match(path)
            if match:
                return handler(match, query, body)
        return json_response({"error": "not found"}, 404)


class _RequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    router: Router  # set by make_server

    def log_message(self, *args: Any) -> None:  # quiet by default
        pass

    def _handle(self, method: str) -> None:
        parsed = urllib.parse.urlsplit(self.path)
        query = dict(urllib.parse.parse_qsl(parsed.query))
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length) if length else b""
        query["_header_node_id"] = self.headers.get("X-Node-Id", "")
        try:
            status, ctype, payload = self.router.dispatch(method, parsed.path, query, body)
        except Exception as exc:  # noqa: BLE001 - service must not die on a request
            status, ctype, payload = json_response({"error": str(exc)}, 500)
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self) -> None:
        self._handle("GET")

    def do_POST(self) -> None:
        self._handle("POST")


def make_server(router: Router, host: str = "127.0.0.1",
                port: int = 0) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_RequestHandler,), {"router": router})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve_in_thread(server: ThreadingHTTPServer) -> threading.Thread:
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return thread


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TransportError(Exception):
    """Network-level failure talking to a peer service."""


def http_request(method: str, url: str, body: bytes | None = None,
                 content_type: str = "application/octet-stream",
                 headers: dict[str, str] | None = None,
                 timeout: float = 10.0) -> tuple[int, bytes]:
    request = urllib.request.Request(url, data=body, method=method)
    if body is not None:
        request.add_header("Content-Type", content_type)
    for key, value in (headers or {}).items():
        request.add_header(key, value)
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return response.status, response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except (urllib.error.URLError, TimeoutError, ConnectionError, socket.timeout, OSError) as exc:
        raise TransportError(str(exc)) from None


def get_json(url: str, timeout: float = 10.0) -> Any:
    status, body = http_request("GET", url, timeout=timeout)
    if status != 200:
        raise TransportError(f"GET {url} -> {status}: {body[:200]!r}")
    return json.loads(body)


def post_json(url: str, obj: Any, timeout: float = 10.0) -> tuple[int, Any]:
    status, body = http_request(
        "POST", url, json.dumps(obj).encode("utf-8"), "application/json",
        timeout=timeout)
    return status, json.loads(body) if body else None
