from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from vericwety.corpus import load_corpus


TWO_MODULE_FILE = """\
// two independent designs in one file
module adder (input a, input b, output s);
  assign s = a ^ b;
endmodule

module masker (input [7:0] d, output [7:0] q);
  assign q = d & 8'h0F;
endmodule
"""

SINGLE_MODULE = """\
module tiny (input x);
  wire y;
endmodule"""


@pytest.fixture
def small_corpus(tmp_path):
    root = tmp_path / "corpus"
    root.mkdir()
    (root / "f.v").write_text(TWO_MODULE_FILE, encoding="utf-8")
    (root / "tiny.sv").write_text(SINGLE_MODULE, encoding="utf-8")
    (root / "notes.txt").write_text("not verilog", encoding="utf-8")
    return root


@pytest.fixture
def small_units(small_corpus):
    return load_corpus(small_corpus)


class _Handler(BaseHTTPRequestHandler):
    """Fake chat-completion + embedding endpoint; scenario picked by payload."""

    def log_message(self, *args):
        pass

    def _send(self, code, body: bytes, content_type="application/json"):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        if self.path == "/embed":
            text = payload.get("text", "")
            if text == "503":
                self._send(503, b"{}")
                return
            dim = 8 if "short" in text else 16
            body = json.dumps({"embedding": [0.5] * dim}).encode()
            self._send(200, body)
            return
        model = payload.get("model", "ok")
        if model == "auth":
            self._send(401, b"{}")
            return
        if model == "boom":
            self._send(500, b"{}")
            return
        if model == "malformed":
            content = "I think line 3 looks odd but cannot say more."
        elif model == "slow":
            time.sleep(0.6)
            content = json.dumps({"cwe": "NONE", "buggy_lines": []})
        else:
            content = json.dumps({"cwe": "CWE-1244", "buggy_lines": [2]})
        body = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        self._send(200, body)


@pytest.fixture(scope="session")
def fake_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
