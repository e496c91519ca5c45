"""HTTP transport with per-scan cookie state.

One ``Session`` owns one cookie jar and issues requests strictly one at a
time, which is what keeps multi-step workflows intact. Form submissions are
encoded the way a browser encodes them: ``application/x-www-form-urlencoded``
with ``+`` for spaces, or a JSON body when the form is markup-declared AJAX.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
from urllib.parse import parse_qsl, urlencode, urljoin, urlsplit, urlunsplit

import requests

from .errors import ConfigError, TransportError

logger = logging.getLogger(__name__)

Pairs = Sequence[tuple[str, str]]

MAX_REDIRECTS = 5


def encode_pairs(pairs: Pairs) -> str:
    """Form-encode ordered name/value pairs (space becomes ``+``)."""
    return urlencode(list(pairs))


def decode_pairs(encoded: str) -> list[tuple[str, str]]:
    """Decode a query/body string; accepts both ``+`` and ``%20`` for space."""
    return parse_qsl(encoded, keep_blank_values=True)


@dataclass
class HttpRequest:
    method: str
    url: str  # absolute, without query string
    query_params: list[tuple[str, str]] = field(default_factory=list)
    body_params: list[tuple[str, str]] = field(default_factory=list)
    json_body: Optional[dict] = None  # set instead of body_params for AJAX forms
    headers: list[tuple[str, str]] = field(default_factory=list)

    def full_url(self) -> str:
        scheme, netloc, path, _, frag = urlsplit(self.url)
        query = encode_pairs(self.query_params) if self.query_params else ""
        return urlunsplit((scheme, netloc, path, query, frag))

    def body_text(self) -> str:
        if self.json_body is not None:
            return json.dumps(self.json_body)
        return encode_pairs(self.body_params)

    def describe(self) -> str:
        """Origin-relative request line plus body, for report evidence."""
        parts = urlsplit(self.full_url())
        path = parts.path + (("?" + parts.query) if parts.query else "")
        body = self.body_text()
        return f"{self.method} {path}" + (f" body={body}" if body else "")


@dataclass
class HttpResponse:
    status: int
    content_type: str
    body: bytes
    headers: list[tuple[str, str]]
    url: str  # final URL after redirects; base for resolving form actions

    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


class Session:
    """Sequential HTTP client bound to one cookie jar.

    Cookies set by the server are echoed on later same-origin requests and are
    never part of parameter analysis. Redirects are followed up to
    ``MAX_REDIRECTS`` hops inside a single step, converting to GET per standard
    semantics; the final response is the step response.
    """

    def __init__(self, delay_ms: int = 0, timeout: float = 15.0,
                 on_send: Optional[Callable[[], None]] = None):
        self.delay_ms = delay_ms
        self.timeout = timeout
        self._on_send = on_send
        self._http = requests.Session()
        self._http.max_redirects = MAX_REDIRECTS
        self.requests_sent = 0

    def send(self, request: HttpRequest) -> HttpResponse:
        if self.delay_ms:
            time.sleep(self.delay_ms / 1000.0)
        url = request.full_url()
        headers = dict(request.headers)
        data = None
        if request.method == "POST":
            if request.json_body is not None:
                data = json.dumps(request.json_body).encode("utf-8")
                headers.setdefault("Content-Type", "application/json")
            else:
                data = encode_pairs(request.body_params).encode("ascii")
                headers.setdefault("Content-Type",
                                   "application/x-www-form-urlencoded")
        try:
            raw = self._http.request(request.method, url, data=data,
                                     headers=headers, timeout=self.timeout,
                                     allow_redirects=True)
        except requests.RequestException as exc:
            raise TransportError(f"{request.method} {url} failed: {exc}") from exc
        self.requests_sent += 1
        if self._on_send:
            self._on_send()
        content_type = raw.headers.get("Content-Type", "")
        return HttpResponse(
            status=raw.status_code,
            content_type=content_type.split(";")[0].strip().lower(),
            body=raw.content,
            headers=list(raw.headers.items()),
            url=raw.url,
        )

    def close(self) -> None:
        self._http.close()


def build_submission(form, values: Pairs, page_url: str,
                     query_values: Optional[Pairs] = None) -> HttpRequest:
    """Build the request a browser would send for ``form`` with ``values``.

    ``values`` are the submission pairs for the form controls in document
    order. Query pairs hardcoded in the action URL are preserved; pass
    ``query_values`` to replace them (e.g. when a query parameter is fuzzed).
    For GET forms the control pairs are appended to the preserved query.
    """
    action = form.action or ""
    if not page_url and not urlsplit(action).scheme:
        raise ConfigError(f"relative form action {action!r} with no base URL")
    target = urljoin(page_url, action) if page_url else action
    scheme, netloc, path, query, _ = urlsplit(target)
    hardcoded = decode_pairs(query) if query_values is None else list(query_values)
    base = urlunsplit((scheme, netloc, path, "", ""))

    method = (form.method or "GET").upper()
    if form.ajax:
        return HttpRequest(method="POST", url=base, query_params=hardcoded,
                           json_body=dict(values))
    if method == "GET":
        return HttpRequest(method="GET", url=base,
                           query_params=hardcoded + list(values))
    return HttpRequest(method="POST", url=base, query_params=hardcoded,
                       body_params=list(values))
