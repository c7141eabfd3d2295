import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest
from hypothesis import HealthCheck, settings

from firecampaign.tracker import RunStore

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def store(tmp_path):
    return RunStore(tmp_path / "store")


class _CarbonHandler(BaseHTTPRequestHandler):
    def do_GET(self):
        self.server.seen.append((self.path, self.headers.get("auth-token")))
        if self.headers.get("auth-token") != "secret":
            self.send_response(401)
            self.end_headers()
            return
        zone = parse_qs(urlparse(self.path).query).get("zone", [""])[0]
        body = json.dumps({"zone": zone, "carbonIntensity": 123.5}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def carbon_server():
    """Local stand-in for a carbon-intensity endpoint; yields its URL."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _CarbonHandler)
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/intensity", server
    server.shutdown()
    server.server_close()

