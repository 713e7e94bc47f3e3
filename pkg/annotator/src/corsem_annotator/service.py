"""HTTP service implementing the VQA wire protocol.

POST /v1/vqa takes {"image_b64": <base64 JPEG/PNG>, "prompt": <string>}
and returns {"answer": "yes"|"no", "confidence": <0..1>}.  Status codes:
400 malformed JSON or missing fields, 422 undecodable image, 503 while
no model is loaded.  GET /v1/health reports {"status": "ok"}.  Requests
are handled serially per model instance.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

from .models import ImageDecodeError


class VqaService:
    def __init__(self, model=None, host: str = "127.0.0.1", port: int = 8077):
        self.host = host
        self.port = port
        self._model = model
        self._model_lock = threading.Lock()
        self._server = None
        self._thread = None

    @property
    def model(self):
        with self._model_lock:
            return self._model

    def set_model(self, model) -> None:
        with self._model_lock:
            self._model = model

    def _make_handler(service):
        class Handler(BaseHTTPRequestHandler):
            def _send_json(self, status: int, doc: dict) -> None:
                body = json.dumps(doc).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/v1/health":
                    self._send_json(200, {"status": "ok"})
                else:
                    self._send_json(404, {"error": "not found"})

            def do_POST(self):
                if self.path != "/v1/vqa":
                    self._send_json(404, {"error": "not found"})
                    return
                model = service.model
                if model is None:
                    self._send_json(503, {"error": "model unavailable"})
                    return
                try:
                    length = int(self.headers.get("Content-Length", 0))
                    doc = json.loads(self.rfile.read(length))
                except (ValueError, json.JSONDecodeError):
                    self._send_json(400, {"error": "malformed JSON"})
                    return
                if not isinstance(doc, dict) or \
                        not isinstance(doc.get("image_b64"), str) or \
                        not isinstance(doc.get("prompt"), str):
                    self._send_json(400, {"error":
                                          "expected {'image_b64', 'prompt'}"})
                    return
                try:
                    image_bytes = base64.b64decode(doc["image_b64"],
                                                   validate=True)
                except (binascii.Error, ValueError):
                    self._send_json(422, {"error": "undecodable image"})
                    return
                try:
                    answer, confidence = model.answer(image_bytes, doc["prompt"])
                except ImageDecodeError:
                    self._send_json(422, {"error": "undecodable image"})
                    return
                self._send_json(200, {"answer": answer,
                                      "confidence": float(confidence)})

            def log_message(self, *args):
                pass

        return Handler

    def start(self) -> None:
        """Bind and serve in a background thread; returns once listening."""
        self._server = HTTPServer((self.host, self.port), self._make_handler())
        self.port = self._server.server_port
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def serve_forever(self) -> None:
        """Foreground serving (CLI path)."""
        self._server = HTTPServer((self.host, self.port), self._make_handler())
        self.port = self._server.server_port
        try:
            self._server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self._server.server_close()
