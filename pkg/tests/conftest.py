import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, list[bool]] = {}
_NOTES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record an acceptance line; the outcome is filled in after the test runs."""
    names = []

    def record(name):
        names.append(name)

    yield record
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    for name in names:
        _CRITERIA.setdefault(name, []).append(ok)


@pytest.fixture
def note():
    """Attach a measured figure to the acceptance summary."""
    return _NOTES.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _CRITERIA.items():
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
    for line in _NOTES:
        terminalreporter.write_line(f"note  {line}")


class StubServer:
    """Tiny JSON-over-HTTP server; ``handler(path, body) -> (status, obj)``."""

    def __init__(self, handler):
        self.handler = handler
        self.requests = []
        stub = self

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])) or b"{}")
                stub.requests.append((self.path, body, dict(self.headers)))
                status, obj = stub.handler(self.path, body)
                data = json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def make(handler):
        s = StubServer(handler)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()
