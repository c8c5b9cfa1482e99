"""Chat-with-images client shared by every model role, plus a deterministic mock.

All model roles (captioner, verifier, detector, annotator, judge) reduce to
"text and images in, text out". The HTTP wire format is::

    POST {base_url}/v1/chat
    {"model": ..., "messages": [{"role": "system"|"user", "content": [
        {"type": "text", "text": ...} | {"type": "image", "media_type": ..., "data": <base64>}]}],
     "temperature": ..., "max_tokens": ...}

    -> {"text": ..., "prompt_tokens": int, "completion_tokens": int}
"""

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol
from urllib.parse import urlparse

import httpx
import yaml

from .text import normalize

logger = logging.getLogger(__name__)


class EndpointError(Exception):
    pass


class EndpointUsageError(EndpointError):
    pass


class TransportError(EndpointError):
    def __init__(self, msg: str, attempts: int):
        super().__init__(f"{msg} after {attempts} attempt(s)")
        self.attempts = attempts


class ProtocolError(EndpointError):
    def __init__(self, msg: str, raw: str = "", status: Optional[int] = None, attempts: int = 1):
        super().__init__(msg)
        self.raw = raw
        self.status = status
        self.attempts = attempts


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    parallelism: int = 4

    def __post_init__(self):
        if self.parallelism < 1:
            raise EndpointUsageError("parallelism must be >= 1")
        if self.timeout <= 0:
            raise EndpointUsageError("timeout must be > 0")
        if self.max_retries < 0:
            raise EndpointUsageError("max_retries must be >= 0")
        if self.backoff_base < 0:
            raise EndpointUsageError("backoff_base must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "EndpointConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        missing = {"base_url", "model_name"} - known.keys()
        if missing:
            raise EndpointUsageError(f"endpoint config missing {sorted(missing)}")
        return cls(**known)

    def api_key(self) -> Optional[str]:
        if not self.api_key_env:
            return None
        key = os.environ.get(self.api_key_env)
        if not key:
            raise EndpointUsageError(f"environment variable {self.api_key_env} is not set")
        return key


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: Optional[str] = None
    image_payloads: tuple = ()  # (media_type, bytes) pairs
    temperature: float = 0.0
    max_output_tokens: int = 1024

    def __post_init__(self):
        if not self.user_text:
            raise EndpointUsageError("user_text must be non-empty")
        for media_type, data in self.image_payloads:
            if not data:
                raise EndpointUsageError(f"empty {media_type} image payload")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class Endpoint(Protocol):
    name: str

    def complete(self, req: ChatRequest, context: Optional[dict] = None) -> ChatResponse: ...


def build_payload(cfg: EndpointConfig, req: ChatRequest) -> dict:
    messages = []
    if req.system_text:
        messages.append({"role": "system", "content": [{"type": "text", "text": req.system_text}]})
    content = [{"type": "text", "text": req.user_text}]
    for media_type, data in req.image_payloads:
        content.append({
            "type": "image",
            "media_type": media_type,
            "data": base64.b64encode(data).decode("ascii"),
        })
    messages.append({"role": "user", "content": content})
    return {
        "model": cfg.model_name,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    }


def parse_response(raw: str) -> ChatResponse:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError:
        raise ProtocolError("response is not JSON", raw=raw) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("text"), str):
        raise ProtocolError("response lacks a 'text' string", raw=raw)
    pt, ct = doc.get("prompt_tokens", 0), doc.get("completion_tokens", 0)
    if not all(isinstance(x, int) and not isinstance(x, bool) and x >= 0 for x in (pt, ct)):
        raise ProtocolError("token counts must be non-negative integers", raw=raw)
    return ChatResponse(doc["text"], pt, ct)


def _transient(status: int) -> bool:
    return status == 429 or 500 <= status < 600


class HttpEndpoint:
    """Thread-safe client for one configured service.

    At most ``cfg.parallelism`` requests are in flight at any instant.
    ``transport`` and ``sleep`` are injectable for tests.
    """

    def __init__(self, cfg: EndpointConfig, transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep, name: str = "endpoint"):
        parsed = urlparse(cfg.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise EndpointUsageError(f"malformed base_url {cfg.base_url!r}")
        self.cfg = cfg
        self.name = name
        self.model_name = cfg.model_name
        self._headers = {"content-type": "application/json"}
        key = cfg.api_key()
        if key:
            self._headers["authorization"] = f"Bearer {key}"
        self._client = httpx.Client(transport=transport, timeout=cfg.timeout)
        self._slots = threading.BoundedSemaphore(cfg.parallelism)
        self._sleep = sleep
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0

    @property
    def url(self) -> str:
        return self.cfg.base_url.rstrip("/") + "/v1/chat"

    def _post(self, payload: dict) -> httpx.Response:
        with self._slots:
            with self._lock:
                self.in_flight += 1
                self.max_in_flight = max(self.max_in_flight, self.in_flight)
            try:
                return self._client.post(self.url, json=payload, headers=self._headers)
            finally:
                with self._lock:
                    self.in_flight -= 1

    def complete(self, req: ChatRequest, context: Optional[dict] = None) -> ChatResponse:
        payload = build_payload(self.cfg, req)
        attempts = 0
        last = ""
        while True:
            attempts += 1
            try:
                resp = self._post(payload)
            except (httpx.TimeoutException, httpx.NetworkError) as e:
                last = f"{type(e).__name__}: {e}"
            else:
                if resp.status_code == 200:
                    try:
                        return parse_response(resp.text)
                    except ProtocolError as e:
                        e.attempts = attempts
                        raise
                if not _transient(resp.status_code):
                    raise ProtocolError(f"service returned HTTP {resp.status_code}",
                                        raw=resp.text, status=resp.status_code, attempts=attempts)
                last = f"HTTP {resp.status_code}"
            if attempts > self.cfg.max_retries:
                raise TransportError(last, attempts)
            delay = self.cfg.backoff_base * (2 ** (attempts - 1))
            logger.debug("%s: %s, retrying in %.2fs", self.name, last, delay)
            self._sleep(delay)

    def close(self):
        self._client.close()


def complete(cfg: EndpointConfig, req: ChatRequest, transport=None, sleep=time.sleep) -> ChatResponse:
    client = HttpEndpoint(cfg, transport=transport, sleep=sleep)
    try:
        return client.complete(req)
    finally:
        client.close()


# --- deterministic mock -------------------------------------------------------

MOCK_BEHAVIORS = ("caption", "verify", "judge", "detect", "annotate")


def _pairs(aspects) -> list[tuple[str, str]]:
    if isinstance(aspects, dict):
        return list(aspects.items())
    return [tuple(p) for p in aspects or ()]


def _mock_caption(req, ctx):
    values = [v for _, v in _pairs(ctx.get("aspects"))]
    if not values:
        return "A product photo of a single item on a plain background."
    return "A product photo of an item featuring " + ", ".join(values) + "."


def _mock_verify(req, ctx):
    caption = normalize(ctx.get("caption", ""))
    names = [n for n, v in _pairs(ctx.get("aspects")) if normalize(v) and normalize(v) in caption]
    return ", ".join(names) if names else "NONE"


def _mock_judge(req, ctx):
    gold: dict = {}
    for k, v in (ctx.get("gold") or {}).items():
        gold.setdefault(normalize(k), (k, v))
    verdicts, matched = [], []
    for key, value in (ctx.get("predicted") or {}).items():
        hit = gold.get(normalize(key))
        if hit is None:
            label = "unverifiable"
        elif normalize(str(hit[1])) == normalize(str(value)):
            label = "verifiable-correct"
            if hit[0] not in matched:
                matched.append(hit[0])
        else:
            label = "verifiable-incorrect"
        verdicts.append({"key": key, "label": label})
    return json.dumps({"verdicts": verdicts, "matched_gold_keys": matched}, ensure_ascii=False)


def _mock_detect(req, ctx):
    w, h = int(ctx.get("width", 0)), int(ctx.get("height", 0))
    if not req.image_payloads or w < 4 or h < 4:
        return json.dumps({"boxes": []})
    digest = hashlib.sha256(req.image_payloads[0][1]).digest()
    n = digest[0] % 3
    boxes = []
    for i in range(n):
        b = digest[1 + 4 * i: 5 + 4 * i]
        x0 = b[0] * (w // 2) // 256
        y0 = b[1] * (h // 2) // 256
        x1 = x0 + 1 + b[2] * (w - x0 - 1) // 256
        y1 = y0 + 1 + b[3] * (h - y0 - 1) // 256
        boxes.append([x0, y0, x1, y1])
    return json.dumps({"boxes": boxes})


def _mock_annotate(req, ctx):
    return json.dumps(ctx.get("gold") or {}, ensure_ascii=False)


_MOCKS = {
    "caption": _mock_caption,
    "verify": _mock_verify,
    "judge": _mock_judge,
    "detect": _mock_detect,
    "annotate": _mock_annotate,
}


def mock_complete(req: ChatRequest, behavior: str, context: Optional[dict] = None) -> ChatResponse:
    """Deterministic stand-in for a model service, driven by ``context``."""
    fn = _MOCKS.get(behavior)
    if fn is None:
        raise EndpointUsageError(f"unknown mock behavior {behavior!r}; expected one of {MOCK_BEHAVIORS}")
    text = fn(req, context or {})
    prompt_tokens = len(req.user_text.split()) + len((req.system_text or "").split())
    return ChatResponse(text, prompt_tokens, len(text.split()))


@dataclass
class MockEndpoint:
    behavior: str
    name: str = field(default="")
    model_name: str = field(default="")

    def __post_init__(self):
        if self.behavior not in MOCK_BEHAVIORS:
            raise EndpointUsageError(f"unknown mock behavior {self.behavior!r}")
        self.name = self.name or f"mock-{self.behavior}"
        self.model_name = self.model_name or self.name

    def complete(self, req: ChatRequest, context: Optional[dict] = None) -> ChatResponse:
        return mock_complete(req, self.behavior, context)


def load_endpoint(spec, behavior: str, name: str = "") -> Endpoint:
    """Build an endpoint from ``"mock"``, a config mapping, or a YAML file path."""
    if spec is None or spec == "mock":
        return MockEndpoint(behavior, name=f"mock-{behavior}")
    if isinstance(spec, EndpointConfig):
        cfg = spec
    elif isinstance(spec, dict):
        if spec.get("mock"):
            return MockEndpoint(behavior)
        cfg = EndpointConfig.from_dict(spec)
    else:
        with open(spec, encoding="utf-8") as f:
            doc = yaml.safe_load(f) or {}
        cfg = EndpointConfig.from_dict(doc)
    return HttpEndpoint(cfg, name=name or behavior)
