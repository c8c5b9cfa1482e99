import base64
import json
import threading
import time

import httpx
import pytest

from listingforge.endpoints import (ChatRequest, EndpointConfig, EndpointUsageError, HttpEndpoint,
                                    MockEndpoint, ProtocolError, TransportError, build_payload,
                                    complete, load_endpoint, mock_complete, parse_response)

OK = {"text": "ok", "prompt_tokens": 10, "completion_tokens": 1}


def cfg(**kw):
    base = dict(base_url="http://svc.test", model_name="m", max_retries=3, backoff_base=0.1)
    base.update(kw)
    return EndpointConfig(**base)


def scripted(statuses):
    calls = []

    def handler(request):
        calls.append(request)
        status = statuses[min(len(calls) - 1, len(statuses) - 1)]
        if status == "timeout":
            raise httpx.ReadTimeout("slow", request=request)
        body = OK if status == 200 else {"error": "x"}
        return httpx.Response(status, json=body)

    return httpx.MockTransport(handler), calls


def test_retry_then_success():
    transport, calls = scripted([500, 500, 200])
    delays = []
    resp = complete(cfg(), ChatRequest("hi"), transport=transport, sleep=delays.append)
    assert resp.text == "ok" and len(calls) == 3
    assert delays == [0.1, 0.2]


def test_no_retry_on_400():
    transport, calls = scripted([400])
    with pytest.raises(ProtocolError) as e:
        complete(cfg(), ChatRequest("hi"), transport=transport, sleep=lambda s: None)
    assert e.value.attempts == 1 and e.value.status == 400 and len(calls) == 1


def test_retries_exhausted():
    transport, calls = scripted([429, 503, "timeout", 500, 500])
    delays = []
    with pytest.raises(TransportError) as e:
        complete(cfg(max_retries=3), ChatRequest("hi"), transport=transport, sleep=delays.append)
    assert e.value.attempts == 4 and len(calls) == 4
    assert len(delays) == 3
    assert all(a <= b for a, b in zip(delays, delays[1:]))


def test_zero_retries():
    transport, calls = scripted([500])
    with pytest.raises(TransportError):
        complete(cfg(max_retries=0), ChatRequest("hi"), transport=transport, sleep=lambda s: None)
    assert len(calls) == 1


def test_field_mapping_and_payload():
    r = parse_response(json.dumps(OK))
    assert (r.text, r.prompt_tokens, r.completion_tokens) == ("ok", 10, 1)
    with pytest.raises(ProtocolError) as e:
        parse_response("not json")
    assert e.value.raw == "not json"
    p = build_payload(cfg(), ChatRequest("u", "s", (("image/png", b"\x89PNG"),)))
    assert p["messages"][0]["role"] == "system"
    img = p["messages"][1]["content"][1]
    assert img["type"] == "image" and base64.b64decode(img["data"]) == b"\x89PNG"
    assert p["temperature"] == 0.0 and p["max_tokens"] == 1024


def test_url_and_auth(monkeypatch):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=OK)

    monkeypatch.setenv("SVC_KEY", "sekret")
    ep = HttpEndpoint(cfg(api_key_env="SVC_KEY", base_url="http://svc.test/"),
                      transport=httpx.MockTransport(handler))
    ep.complete(ChatRequest("x"))
    assert seen == {"url": "http://svc.test/v1/chat", "auth": "Bearer sekret"}


def test_config_validation(monkeypatch):
    with pytest.raises(EndpointUsageError):
        cfg(parallelism=0)
    with pytest.raises(EndpointUsageError):
        cfg(timeout=0)
    with pytest.raises(EndpointUsageError):
        HttpEndpoint(cfg(base_url="ftp:/nope"))
    monkeypatch.delenv("MISSING_KEY", raising=False)
    with pytest.raises(EndpointUsageError):
        HttpEndpoint(cfg(api_key_env="MISSING_KEY"))
    with pytest.raises(EndpointUsageError):
        ChatRequest("")
    with pytest.raises(EndpointUsageError):
        ChatRequest("x", image_payloads=(("image/png", b""),))


def test_bounded_concurrency():
    gate = threading.Lock()
    active = {"now": 0, "max": 0}

    def handler(request):
        with gate:
            active["now"] += 1
            active["max"] = max(active["max"], active["now"])
        time.sleep(0.02)
        with gate:
            active["now"] -= 1
        return httpx.Response(200, json=OK)

    ep = HttpEndpoint(cfg(parallelism=3), transport=httpx.MockTransport(handler))
    threads = [threading.Thread(target=ep.complete, args=(ChatRequest("x"),)) for _ in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert active["max"] <= 3 and ep.max_in_flight <= 3
    assert ep.in_flight == 0


def test_mock_behaviors():
    r = mock_complete(ChatRequest("c"), "caption", {"aspects": {"Color": "Red", "Material": "Leather"}})
    assert "red" in r.text.lower() and "leather" in r.text.lower()
    v = mock_complete(ChatRequest("v"), "verify",
                      {"caption": "a red bag", "aspects": {"Color": "Red", "Brand": "Gucci"}})
    assert v.text == "Color"
    assert mock_complete(ChatRequest("v"), "verify", {"caption": "x", "aspects": [["A", "zz"]]}).text == "NONE"
    req = ChatRequest("d", image_payloads=(("image/png", b"abc"),))
    a = mock_complete(req, "detect", {"width": 64, "height": 48})
    assert a == mock_complete(req, "detect", {"width": 64, "height": 48})
    for b in json.loads(a.text)["boxes"]:
        assert 0 <= b[0] < b[2] <= 64 and 0 <= b[1] < b[3] <= 48
    gold = {"brand": "Acme"}
    assert json.loads(mock_complete(ChatRequest("a"), "annotate", {"gold": gold}).text) == gold
    with pytest.raises(EndpointUsageError):
        mock_complete(ChatRequest("x"), "dance")


def test_load_endpoint(tmp_path):
    assert isinstance(load_endpoint("mock", "caption"), MockEndpoint)
    assert isinstance(load_endpoint({"mock": True}, "judge"), MockEndpoint)
    path = tmp_path / "ep.yaml"
    path.write_text("base_url: http://svc.test\nmodel_name: cap\nparallelism: 2\n")
    ep = load_endpoint(str(path), "caption")
    assert isinstance(ep, HttpEndpoint) and ep.cfg.parallelism == 2 and ep.model_name == "cap"
    with pytest.raises(EndpointUsageError):
        load_endpoint({"base_url": "http://x"}, "caption")
