"""Golden request/response suite for the wire protocol."""

import base64
import json
import urllib.error
import urllib.request

import pytest

from conftest import make_png
from corsem_annotator.models import StubVqaModel
from corsem_annotator.service import VqaService


@pytest.fixture
def service():
    svc = VqaService(model=StubVqaModel(), port=0)
    svc.start()
    yield svc
    svc.stop()


def post(service, payload, raw=None):
    body = raw if raw is not None else json.dumps(payload).encode()
    request = urllib.request.Request(
        f"http://127.0.0.1:{service.port}/v1/vqa", data=body,
        headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read() or b"{}")


class TestGoldenSuite:
    def test_valid_request_schema(self, service):
        payload = {"image_b64": base64.b64encode(make_png(1)).decode(),
                   "prompt": "Is there any face that can be easily recognized in this image?"}
        status, doc = post(service, payload)
        assert status == 200
        assert set(doc) == {"answer", "confidence"}
        assert doc["answer"] in ("yes", "no")
        assert 0.0 <= doc["confidence"] <= 1.0

    def test_deterministic_answers(self, service):
        payload = {"image_b64": base64.b64encode(make_png(2)).decode(),
                   "prompt": "Is there any dog that can be easily recognized in this image?"}
        first = post(service, payload)
        second = post(service, payload)
        assert first == second

    def test_empty_object_is_400(self, service):
        status, doc = post(service, {})
        assert status == 400

    def test_non_json_body_is_400(self, service):
        status, _ = post(service, None, raw=b"this is not json")
        assert status == 400

    def test_wrong_field_types_are_400(self, service):
        status, _ = post(service, {"image_b64": 7, "prompt": "x"})
        assert status == 400

    def test_invalid_base64_is_422(self, service):
        status, _ = post(service, {"image_b64": "!!!not-base64!!!", "prompt": "x"})
        assert status == 422

    def test_undecodable_image_is_422(self, service):
        status, _ = post(service, {
            "image_b64": base64.b64encode(b"not an image at all").decode(),
            "prompt": "x"})
        assert status == 422

    def test_health_endpoint(self, service):
        with urllib.request.urlopen(
                f"http://127.0.0.1:{service.port}/v1/health", timeout=10) as resp:
            assert resp.status == 200
            assert json.loads(resp.read()) == {"status": "ok"}

    def test_unknown_path_is_404(self, service):
        status, _ = post_path(service, "/v1/unknown")
        assert status == 404


def post_path(service, path):
    request = urllib.request.Request(
        f"http://127.0.0.1:{service.port}{path}", data=b"{}",
        headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, {}


class TestModelUnavailable:
    def test_503_before_model_ready(self):
        svc = VqaService(model=None, port=0)
        svc.start()
        try:
            payload = {"image_b64": base64.b64encode(make_png(3)).decode(),
                       "prompt": "x"}
            status, _ = post(svc, payload)
            assert status == 503
            svc.set_model(StubVqaModel())
            status, doc = post(svc, payload)
            assert status == 200 and doc["answer"] in ("yes", "no")
        finally:
            svc.stop()
