"""Embedded HTTP server hosting the reference applications.

Every scenario enforces the same workflow machinery (session cookie, one-time
tokens, step ordering, dependency checks) and differs only in its forms and
its planted validation gap. Every rejected request is logged with exactly one
cause from: token-missing, token-spent, dependency-mismatch, workflow-order,
validation-fail. Debug endpoints (excluded from scanning): ``GET /_log``
(``?clear=1`` to clear), ``POST /_reset``, ``GET /_echo``.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import string
import threading
from dataclasses import dataclass, field
from http.cookies import SimpleCookie
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from random import Random
from typing import Optional
from urllib.parse import parse_qsl, urlsplit

from ..errors import ConfigError
from . import pages
from .scenarios import ScenarioConfig

logger = logging.getLogger(__name__)

TOKEN_ALPHABET = string.ascii_lowercase  # letters only: keeps numeric
# reflection analysis free of accidental token matches

HSBC_SERVER_TO_RE = re.compile(r".{1,25}~~.{1,20}")


@dataclass
class ServerSession:
    sessid: str
    sesstok: str
    otp: str
    csrf1: Optional[str] = None
    csrf2: Optional[str] = None
    spent: set = field(default_factory=set)
    store: dict = field(default_factory=dict)
    step_a_done: bool = False


@dataclass
class Response:
    status: int = 200
    content_type: str = "text/html; charset=utf-8"
    body: bytes = b""
    location: Optional[str] = None
    set_cookie: Optional[str] = None


class TestbedState:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.lock = threading.RLock()
        self.rng = Random(config.seed)
        self.sessions: dict[str, ServerSession] = {}
        self.log: list[dict] = []
        self.transfers: list[dict] = []

    def token(self, length: int = 16) -> str:
        return "".join(self.rng.choice(TOKEN_ALPHABET) for _ in range(length))

    def session_for(self, sessid: Optional[str]) -> tuple[ServerSession, bool]:
        if sessid and sessid in self.sessions:
            return self.sessions[sessid], False
        new_id = self.token(20)
        session = ServerSession(sessid=new_id, sesstok=self.token(),
                                otp=self.token(6))
        self.sessions[new_id] = session
        return session, True

    def log_rejection(self, handler: str, cause: str, detail: str,
                      sessid: str) -> None:
        self.log.append({"handler": handler, "cause": cause,
                         "detail": detail, "sessid": sessid})

    def record_transfer(self, from_acct: str, to: str, amount: float) -> None:
        self.transfers.append({"from": from_acct, "to": to, "amount": amount})

    def reset(self) -> None:
        self.sessions.clear()
        self.log.clear()
        self.transfers.clear()


class ScenarioApp:
    """Base application: token plumbing and rejection logging."""

    def __init__(self, state: TestbedState):
        self.state = state
        self.config = state.config

    # -- helpers -----------------------------------------------------------

    def _reject(self, handler: str, cause: str, detail: str,
                sess: ServerSession) -> Response:
        self.state.log_rejection(handler, cause, detail, sess.sessid)
        return Response(body=pages.error_page(detail).encode("utf-8"))

    def _reject_json(self, handler: str, cause: str, detail: str, msg: str,
                     sess: ServerSession) -> Response:
        self.state.log_rejection(handler, cause, detail, sess.sessid)
        body = json.dumps({"success": 0, "msg": msg}).encode("utf-8")
        return Response(content_type="application/json", body=body)

    def _check_one_time(self, handler: str, sess: ServerSession, params: dict,
                        name: str, attr: str,
                        json_mode: bool = False) -> Optional[Response]:
        """Verify a one-time token; a value verifies at most once."""
        value = params.get(name, "")
        reject = self._reject_json if json_mode else self._reject
        kwargs = {"msg": "stale or reused request token"} if json_mode else {}
        if not value:
            return reject(handler, "token-missing", f"{name} absent", sess,
                          **kwargs)
        current = getattr(sess, attr)
        if value != current or value in sess.spent:
            return reject(handler, "token-spent", f"{name} stale or reused",
                          sess, **kwargs)
        sess.spent.add(value)
        setattr(sess, attr, None)
        return None

    def _check_session_token(self, handler: str, sess: ServerSession,
                             params: dict) -> Optional[Response]:
        if params.get("SESSTOK", "") != sess.sesstok:
            return self._reject(handler, "token-spent",
                                "SESSTOK does not match this session", sess)
        return None

    def _parse_amount(self, raw: str) -> Optional[float]:
        try:
            value = float(raw.replace(",", ""))
        except (ValueError, AttributeError):
            return None
        if not (self.config.amount_min <= value <= self.config.amount_max):
            return None
        return value

    def handle(self, method: str, path: str, params: dict,
               sess: ServerSession) -> Optional[Response]:
        raise NotImplementedError


class HsbcApp(ScenarioApp):
    """Three-step transfer. The server format-checks the payee account but,
    with the stock flaw, never verifies it is an authorized payee."""

    def handle(self, method, path, params, sess):
        if method == "GET" and path == "/stepA":
            sess.csrf1 = self.state.token()
            trace = self.state.token(10)
            sess.step_a_done = False
            body = pages.hsbc_step_a(sess.csrf1, sess.sesstok, trace,
                                     self.config.user_accounts,
                                     self.config.amount_min,
                                     self.config.amount_max)
            return Response(body=body.encode("utf-8"))
        if method == "POST" and path == "/stepA":
            return self._step_a(sess, params)
        if method == "GET" and path == "/review":
            if not sess.step_a_done:
                return self._reject("review", "workflow-order",
                                    "no accepted transfer instruction", sess)
            body = pages.hsbc_review(sess.csrf2 or "", sess.sesstok,
                                     sess.store["FROM"], sess.store["TO"],
                                     sess.store["AMT"])
            return Response(body=body.encode("utf-8"))
        if method == "POST" and path == "/stepB":
            return self._step_b(sess, params)
        return None

    def _step_a(self, sess, params):
        err = self._check_one_time("stepA", sess, params, "CSRF1", "csrf1")
        if err:
            return err
        err = self._check_session_token("stepA", sess, params)
        if err:
            return err
        to_type = params.get("TO_TYPE", "")
        if to_type not in ("0", "1"):
            return self._reject("stepA", "validation-fail",
                                "TO_TYPE out of range", sess)
        from_acct = params.get("FROM", "")
        if from_acct not in self.config.user_accounts:
            return self._reject("stepA", "validation-fail",
                                "FROM is not one of the user accounts", sess)
        amt = params.get("AMT", "")
        if self._parse_amount(amt) is None:
            return self._reject("stepA", "validation-fail",
                                "AMT outside permitted range", sess)
        to = params.get("TO", "")
        if not HSBC_SERVER_TO_RE.fullmatch(to):
            return self._reject("stepA", "validation-fail",
                                "TO account format", sess)
        if to_type == "0" and params.get("OTP", "") != sess.otp:
            return self._reject("stepA", "validation-fail",
                                "one-time password mismatch", sess)
        if ("skip-payee-authorization" not in self.config.flaws
                and to_type == "1"
                and to not in self.config.authorized_payees):
            return self._reject("stepA", "validation-fail",
                                "payee not authorized", sess)
        sess.store = {"FROM": from_acct, "TO": to, "AMT": amt}
        sess.step_a_done = True
        sess.csrf2 = self.state.token()
        return Response(status=303, location="/review")

    def _step_b(self, sess, params):
        if not sess.step_a_done:
            return self._reject("stepB", "workflow-order",
                                "no accepted transfer instruction", sess)
        err = self._check_one_time("stepB", sess, params, "CSRF2", "csrf2")
        if err:
            return err
        err = self._check_session_token("stepB", sess, params)
        if err:
            return err
        to = params.get("TO", "")
        if to != sess.store["TO"]:
            return self._reject("stepB", "dependency-mismatch",
                                "TO does not match the stored instruction",
                                sess)
        # AMT in this request is disregarded; the stored value is honored
        sess.step_a_done = False
        txn = self.state.token(6)
        amount = float(sess.store["AMT"].replace(",", ""))
        self.state.record_transfer(sess.store["FROM"], to, amount)
        body = pages.hsbc_ack(txn, sess.store["FROM"], to, sess.store["AMT"])
        return Response(body=body.encode("utf-8"))


class BeaApp(ScenarioApp):
    """Three-step transfer with a client-computed MAC hidden field. The MAC
    is recomputed client-side from whatever is submitted, so it proves
    nothing; with the stock flaw the server also never checks the payee is
    registered."""

    @staticmethod
    def _mac(params: dict) -> str:
        joined = "|".join((params.get("FROM", ""), params.get("TO", ""),
                           params.get("AMT", "")))
        return base64.b64encode(joined.encode("utf-8")).decode("ascii")

    def handle(self, method, path, params, sess):
        if method == "GET" and path == "/stepA":
            sess.csrf1 = self.state.token()
            sess.step_a_done = False
            body = pages.bea_step_a(sess.csrf1, self.config.user_accounts,
                                    self.config.amount_min,
                                    self.config.amount_max)
            return Response(body=body.encode("utf-8"))
        if method == "POST" and path == "/stepA":
            return self._step_a(sess, params)
        if method == "POST" and path == "/stepB":
            return self._step_b(sess, params)
        return None

    def _step_a(self, sess, params):
        err = self._check_one_time("stepA", sess, params, "CSRF1", "csrf1")
        if err:
            return err
        from_acct = params.get("FROM", "")
        if from_acct not in self.config.user_accounts:
            return self._reject("stepA", "validation-fail",
                                "FROM is not one of the user accounts", sess)
        amt = params.get("AMT", "")
        if self._parse_amount(amt) is None:
            return self._reject("stepA", "validation-fail",
                                "AMT outside permitted range", sess)
        to = params.get("TO", "")
        if not to or len(to) > 20:
            return self._reject("stepA", "validation-fail",
                                "TO account format", sess)
        if params.get("MACcode", "") != self._mac(params):
            return self._reject("stepA", "validation-fail",
                                "MACcode does not align with the "
                                "transaction parameters", sess)
        if ("skip-payee-registration" not in self.config.flaws
                and to not in self.config.registered_payees):
            return self._reject("stepA", "validation-fail",
                                "payee not registered", sess)
        sess.store = {"FROM": from_acct, "TO": to, "AMT": amt}
        sess.step_a_done = True
        sess.csrf2 = self.state.token()
        body = pages.bea_review(sess.csrf2, from_acct, to, amt,
                                params.get("MACcode", ""))
        return Response(body=body.encode("utf-8"))

    def _step_b(self, sess, params):
        if not sess.step_a_done:
            return self._reject("stepB", "workflow-order",
                                "no accepted transfer instruction", sess)
        err = self._check_one_time("stepB", sess, params, "CSRF2", "csrf2")
        if err:
            return err
        if params.get("MACcode", "") != self._mac(params):
            return self._reject("stepB", "validation-fail",
                                "MACcode does not align with the "
                                "transaction parameters", sess)
        to = params.get("TO", "")
        if to != sess.store["TO"]:
            return self._reject("stepB", "dependency-mismatch",
                                "TO does not match the stored instruction",
                                sess)
        # FROM and AMT in this request are disregarded; stored values win
        sess.step_a_done = False
        txn = self.state.token(6)
        amount = float(sess.store["AMT"].replace(",", ""))
        self.state.record_transfer(sess.store["FROM"], to, amount)
        body = pages.bea_ack(txn, sess.store["FROM"], to, sess.store["AMT"])
        return Response(body=body.encode("utf-8"))


class BocApp(ScenarioApp):
    """Payees are referenced by a server-side index into an authorized
    mapping, checked at both steps: the proper defense, no planted flaw."""

    def handle(self, method, path, params, sess):
        if method == "GET" and path == "/stepA":
            sess.csrf1 = self.state.token()
            sess.step_a_done = False
            body = pages.boc_step_a(sess.csrf1, self.config.user_accounts,
                                    self.config.account_index_map,
                                    self.config.amount_min,
                                    self.config.amount_max)
            return Response(body=body.encode("utf-8"))
        if method == "POST" and path == "/stepA":
            return self._step_a(sess, params)
        if method == "POST" and path == "/stepB":
            return self._step_b(sess, params)
        return None

    def _step_a(self, sess, params):
        err = self._check_one_time("stepA", sess, params, "CSRF1", "csrf1")
        if err:
            return err
        from_acct = params.get("FROM", "")
        if from_acct not in self.config.user_accounts:
            return self._reject("stepA", "validation-fail",
                                "FROM is not one of the user accounts", sess)
        amt = params.get("AMT", "")
        if self._parse_amount(amt) is None:
            return self._reject("stepA", "validation-fail",
                                "AMT outside permitted range", sess)
        to_idx = params.get("TO_IDX", "")
        if to_idx not in self.config.account_index_map:
            return self._reject("stepA", "validation-fail",
                                "payee index outside the authorized mapping",
                                sess)
        sess.store = {"FROM": from_acct, "TO_IDX": to_idx, "AMT": amt}
        sess.step_a_done = True
        sess.csrf2 = self.state.token()
        payee = self.config.account_index_map[to_idx]
        body = pages.boc_review(sess.csrf2, from_acct, payee, to_idx, amt)
        return Response(body=body.encode("utf-8"))

    def _step_b(self, sess, params):
        if not sess.step_a_done:
            return self._reject("stepB", "workflow-order",
                                "no accepted transfer instruction", sess)
        err = self._check_one_time("stepB", sess, params, "CSRF2", "csrf2")
        if err:
            return err
        to_idx = params.get("TO_IDX", "")
        if to_idx != sess.store["TO_IDX"]:
            return self._reject("stepB", "dependency-mismatch",
                                "TO_IDX does not match the stored instruction",
                                sess)
        if to_idx not in self.config.account_index_map:
            return self._reject("stepB", "validation-fail",
                                "payee index outside the authorized mapping",
                                sess)
        sess.step_a_done = False
        txn = self.state.token(6)
        payee = self.config.account_index_map[to_idx]
        amount = float(sess.store["AMT"].replace(",", ""))
        self.state.record_transfer(sess.store["FROM"], payee, amount)
        body = pages.boc_ack(txn, sess.store["FROM"], payee, sess.store["AMT"])
        return Response(body=body.encode("utf-8"))


class AjaxDateApp(ScenarioApp):
    """Single-page JSON endpoint. The page advertises a 10-day query window;
    with the stock flaw the server never enforces it."""

    def handle(self, method, path, params, sess):
        if method == "GET" and path == "/track":
            sess.csrf1 = self.state.token()
            body = pages.ajax_track(sess.csrf1, self.config.today)
            return Response(body=body.encode("utf-8"))
        if method == "POST" and path == "/track":
            return self._track(sess, params)
        return None

    def _parse_date(self, raw: str) -> Optional[tuple[int, int, int]]:
        parts = (raw or "").split("-")
        if len(parts) != 3:
            return None
        try:
            year, month, day = (int(p) for p in parts)
        except ValueError:
            return None
        if not (1900 <= year <= 2100 and 1 <= month <= 12 and 1 <= day <= 31):
            return None
        return year, month, day

    def _track(self, sess, params):
        err = self._check_one_time("track", sess, params, "CSRF1", "csrf1",
                                   json_mode=True)
        if err:
            return err
        flightno = params.get("flightno", "")
        if flightno not in self.config.known_flights:
            return self._reject_json("track", "validation-fail",
                                     "unknown flight number",
                                     "unknown flight number", sess)
        date = self._parse_date(params.get("date", ""))
        if date is None:
            return self._reject_json("track", "validation-fail",
                                     "unparseable date",
                                     "invalid date supplied", sess)
        if "skip-date-window" not in self.config.flaws:
            today = self._parse_date(self.config.today)
            if not (self._ordinal(today) - 10
                    <= self._ordinal(date) <= self._ordinal(today)):
                return self._reject_json("track", "validation-fail",
                                         "date outside the 10-day window",
                                         "date outside the permitted window",
                                         sess)
        body = json.dumps({
            "success": 1,
            "msg": "On-time performance query completed",
            "ontime": "87%",
            "delayed": "13%",
        }).encode("utf-8")
        return Response(content_type="application/json", body=body)

    @staticmethod
    def _ordinal(date: tuple[int, int, int]) -> int:
        year, month, day = date
        return year * 372 + month * 31 + day  # coarse, fine for a window check


APPS = {
    "hsbc-like": HsbcApp,
    "bea-like": BeaApp,
    "boc-like": BocApp,
    "ajax-date": AjaxDateApp,
}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("testbed: " + fmt, *args)

    def _read_params(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        ctype = (self.headers.get("Content-Type") or "").lower()
        if "json" in ctype:
            try:
                data = json.loads(raw.decode("utf-8"))
                if isinstance(data, dict):
                    return {str(k): str(v) for k, v in data.items()}
            except ValueError:
                pass
            return {}
        return dict(parse_qsl(raw.decode("utf-8", errors="replace"),
                              keep_blank_values=True))

    def _sessid(self) -> Optional[str]:
        cookie = SimpleCookie()
        cookie.load(self.headers.get("Cookie") or "")
        item = cookie.get("SESSID")
        return item.value if item else None

    def _write(self, response: Response) -> None:
        self.send_response(response.status)
        self.send_header("Content-Type", response.content_type)
        self.send_header("Content-Length", str(len(response.body)))
        if response.location:
            self.send_header("Location", response.location)
        if response.set_cookie:
            self.send_header("Set-Cookie", response.set_cookie)
        self.end_headers()
        self.wfile.write(response.body)

    def _dispatch(self, method: str) -> None:
        state: TestbedState = self.server.state  # type: ignore[attr-defined]
        app: ScenarioApp = self.server.app  # type: ignore[attr-defined]
        path = urlsplit(self.path).path
        query = dict(parse_qsl(urlsplit(self.path).query,
                               keep_blank_values=True))
        params = self._read_params() if method == "POST" else query

        with state.lock:
            if path == "/_log" and method == "GET":
                snapshot = {"entries": list(state.log),
                            "transfers": list(state.transfers)}
                if query.get("clear"):
                    state.log.clear()
                    state.transfers.clear()
                body = json.dumps(snapshot).encode("utf-8")
                self._write(Response(content_type="application/json", body=body))
                return
            if path == "/_reset" and method == "POST":
                state.reset()
                self._write(Response(content_type="application/json",
                                     body=b'{"reset": true}'))
                return
            if path == "/_echo" and method == "GET":
                cookie = SimpleCookie()
                cookie.load(self.headers.get("Cookie") or "")
                body = json.dumps({
                    "cookies": {k: v.value for k, v in cookie.items()},
                    "headers": dict(self.headers.items()),
                }).encode("utf-8")
                self._write(Response(content_type="application/json", body=body))
                return

            sess, created = state.session_for(self._sessid())
            response = app.handle(method, path, params, sess)
            if response is None:
                response = Response(status=404, content_type="text/plain",
                                    body=b"not found")
            if created:
                response.set_cookie = f"SESSID={sess.sessid}; Path=/"
            self._write(response)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class TestbedHandle:
    """Running test bed: base URL, direct state access, and shutdown."""

    def __init__(self, server: ThreadingHTTPServer, thread: threading.Thread,
                 state: TestbedState):
        self._server = server
        self._thread = thread
        self.state = state
        host, port = server.server_address[:2]
        self.port = port
        self.base_url = f"http://127.0.0.1:{port}"

    def log_entries(self) -> list[dict]:
        with self.state.lock:
            return [dict(e) for e in self.state.log]

    def transfers(self) -> list[dict]:
        with self.state.lock:
            return [dict(t) for t in self.state.transfers]

    def clear_log(self) -> None:
        with self.state.lock:
            self.state.log.clear()
            self.state.transfers.clear()

    def reset(self) -> None:
        with self.state.lock:
            self.state.reset()

    def stop(self) -> None:
        self._server.shutdown()
        self._thread.join(timeout=5)
        self._server.server_close()

    def __enter__(self) -> "TestbedHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ScenarioConfig) -> TestbedHandle:
    """Start the scenario server on config.port (0 = ephemeral); returns a
    handle with the bound base URL."""
    app_cls = APPS.get(config.scenario)
    if app_cls is None:
        raise ConfigError(f"unknown scenario {config.scenario!r}")
    state = TestbedState(config)
    try:
        server = ThreadingHTTPServer(("127.0.0.1", config.port), _Handler)
    except OSError as exc:
        raise ConfigError(f"cannot bind port {config.port}: {exc}") from exc
    server.state = state  # type: ignore[attr-defined]
    server.app = app_cls(state)  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, daemon=True,
                              name=f"testbed-{config.scenario}")
    thread.start()
    return TestbedHandle(server, thread, state)
