"""HTTP/JSON front door over the store, plus the invite-token handshake.

`WatnApi.handle` is a pure request->response function so tests and the scenario
runner can call it in-process; `serve` wraps it in a threaded stdlib HTTP server.
"""

from __future__ import annotations

import json
import logging
import os
import secrets
import signal
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qsl, urlsplit

from .model import (
    Credential,
    ExpiredError,
    TokenError,
    WatnError,
    b64u,
    canonical_json,
    decode_invite,
    encode_invite,
    is_participant_id,
    new_nonce,
)
from .store import (
    AuthFailedError,
    CounterClock,
    DEFAULT_HISTORY_CAP,
    NotPartyError,
    NotSharedError,
    SelfShareError,
    UnknownParticipantError,
    UsedTokenError,
    WatnStore,
    system_clock,
)

log = logging.getLogger("watn.server")

DEFAULT_INVITE_TTL_MS = 604_800_000  # 7 days
LINK_PREFIX = "watn://accept?token="
MAX_BODY_BYTES = 64 * 1024


class ApiError(WatnError):
    """Request-shape failure with an HTTP status and stable error code."""

    def __init__(self, status: int, code: str, message: str = ""):
        super().__init__(message or code)
        self.status = status
        self.code = code


@dataclass
class ApiConfig:
    bind: str = "127.0.0.1:8470"
    key: bytes = b""
    invite_ttl_ms: int = DEFAULT_INVITE_TTL_MS
    history_cap: int = DEFAULT_HISTORY_CAP
    snapshot_path: str | None = None
    snapshot_interval_s: float = 30.0
    test_clock_start: int | None = None

    @classmethod
    def from_env(cls, env=os.environ) -> "ApiConfig":
        cfg = cls(
            bind=env.get("WATN_BIND", "127.0.0.1:8470"),
            invite_ttl_ms=int(env.get("WATN_TTL_MS", DEFAULT_INVITE_TTL_MS)),
            history_cap=int(env.get("WATN_HISTORY_CAP", DEFAULT_HISTORY_CAP)),
            snapshot_path=env.get("WATN_SNAPSHOT_PATH") or None,
            snapshot_interval_s=float(env.get("WATN_SNAPSHOT_INTERVAL_S", 30.0)),
        )
        raw_key = env.get("WATN_KEY")
        if raw_key:
            cfg.key = _parse_key(raw_key)
        if env.get("WATN_TEST_CLOCK"):
            cfg.test_clock_start = int(env["WATN_TEST_CLOCK"])
        return cfg


def _parse_key(raw: str) -> bytes:
    """Accept a 64-hex-digit signing key from the environment."""
    try:
        key = bytes.fromhex(raw)
    except ValueError:
        raise ValueError("WATN_KEY must be 64 hex digits") from None
    if len(key) != 32:
        raise ValueError("WATN_KEY must decode to 32 bytes")
    return key


def load_or_create_key(path: str) -> bytes:
    """Signing key persisted beside the snapshot so invites survive restarts."""
    if os.path.exists(path):
        with open(path, "r", encoding="ascii") as fh:
            return _parse_key(fh.read().strip())
    key = secrets.token_bytes(32)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
    with os.fdopen(fd, "w", encoding="ascii") as fh:
        fh.write(key.hex())
    return key


_STORE_ERROR_STATUS = {
    AuthFailedError: 401,
    NotPartyError: 403,
    NotSharedError: 403,
    UnknownParticipantError: 404,
    SelfShareError: 409,
    UsedTokenError: 400,
    ExpiredError: 400,
    TokenError: 400,
}


def _status_for(err: WatnError) -> int:
    for klass, status in _STORE_ERROR_STATUS.items():
        if isinstance(err, klass):
            return status
    return 400


class WatnApi:
    """Routes requests to the store; owns the token-signing key."""

    def __init__(
        self,
        store: WatnStore,
        key: bytes,
        invite_ttl_ms: int = DEFAULT_INVITE_TTL_MS,
        clock=system_clock,
        rng=None,
    ):
        if len(key) < 16:
            raise ValueError("signing key too short")
        self.store = store
        self._key = key
        self._ttl = invite_ttl_ms
        self._clock = clock
        self._rng = rng
        self._routes = {
            ("POST", "/register"): self._register,
            ("POST", "/checkin"): self._checkin,
            ("GET", "/feed"): self._feed,
            ("POST", "/invite"): self._invite,
            ("POST", "/accept"): self._accept,
            ("POST", "/revoke"): self._revoke,
            ("GET", "/readers"): self._readers,
            ("GET", "/sharers"): self._sharers,
            ("GET", "/history"): self._history,
            ("POST", "/delete"): self._delete,
        }

    @classmethod
    def from_config(cls, cfg: ApiConfig) -> "WatnApi":
        clock = CounterClock(cfg.test_clock_start) if cfg.test_clock_start is not None else system_clock
        key = cfg.key
        if not key:
            if cfg.snapshot_path:
                key = load_or_create_key(cfg.snapshot_path + ".key")
            else:
                key = secrets.token_bytes(32)
                log.warning("ephemeral signing key: outstanding invites will not survive restart")
        if cfg.snapshot_path and os.path.exists(cfg.snapshot_path):
            store = WatnStore.restore(cfg.snapshot_path, history_cap=cfg.history_cap, clock=clock)
        else:
            store = WatnStore(history_cap=cfg.history_cap, clock=clock)
        return cls(store, key, invite_ttl_ms=cfg.invite_ttl_ms, clock=clock)

    # -- entry point -----------------------------------------------------

    def handle(self, method: str, path: str, query: dict[str, str], body: bytes) -> tuple[int, bytes]:
        handler = self._routes.get((method, path))
        try:
            if handler is None:
                if any(p == path for (_, p) in self._routes):
                    raise ApiError(405, "method_not_allowed")
                raise ApiError(404, "not_found")
            result = handler(query, body)
            return 200, canonical_json(result).encode("utf-8")
        except ApiError as err:
            return err.status, canonical_json({"error": err.code}).encode("utf-8")
        except WatnError as err:
            return _status_for(err), canonical_json({"error": err.code}).encode("utf-8")
        except Exception:
            log.exception("unhandled error in %s %s", method, path)
            return 500, canonical_json({"error": "internal"}).encode("utf-8")

    # -- request parsing ---------------------------------------------------

    def _json_body(self, body: bytes, required: dict[str, type], optional: dict[str, type]) -> dict:
        try:
            data = json.loads(body.decode("utf-8")) if body else {}
        except (UnicodeDecodeError, ValueError):
            raise ApiError(400, "bad_json") from None
        if not isinstance(data, dict):
            raise ApiError(400, "bad_json", "body must be a JSON object")
        return self._check_keys(data, required, optional)

    def _params(self, query: dict[str, str], required: dict[str, type], optional: dict[str, type]) -> dict:
        return self._check_keys(query, required, optional)

    @staticmethod
    def _check_keys(data: dict, required: dict[str, type], optional: dict[str, type]) -> dict:
        # Unknown keys are rejected so identity data cannot leak in by accident.
        for name in data:
            if name not in required and name not in optional:
                raise ApiError(400, "unknown_key", f"unexpected key {name!r}")
        for name in required:
            if name not in data:
                raise ApiError(400, "missing_key", f"missing key {name!r}")
        for name, value in data.items():
            expected = required.get(name) or optional[name]
            if expected is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ApiError(400, "bad_value", f"{name} must be a number")
            elif not isinstance(value, expected):
                raise ApiError(400, "bad_value", f"{name} must be {expected.__name__}")
        return dict(data)

    @staticmethod
    def _cred(data: dict) -> Credential:
        return Credential(data["id"], data["secret"])

    @staticmethod
    def _pid(data: dict, name: str) -> str:
        value = data[name]
        if not is_participant_id(value):
            raise ApiError(400, "bad_value", f"{name} is not a participant ID")
        return value

    # -- endpoints ------------------------------------------------------------

    def _register(self, query, body) -> dict:
        # Body deliberately ignored: registration carries no input at all.
        cred = self.store.register()
        return {"id": cred.id, "secret": cred.secret}

    def _checkin(self, query, body) -> dict:
        data = self._json_body(
            body,
            required={"id": str, "secret": str, "lat": float, "lng": float},
            optional={"msg": str},
        )
        entry = self.store.checkin(self._cred(data), data["lat"], data["lng"], data.get("msg"))
        return {"ts": entry.ts}

    def _feed(self, query, body) -> list:
        data = self._params(query, required={"id": str, "secret": str}, optional={})
        return [e.to_wire() for e in self.store.feed(self._cred(data))]

    def _invite(self, query, body) -> dict:
        data = self._json_body(body, required={"id": str, "secret": str}, optional={})
        cred = self._cred(data)
        self.store.authenticate(cred)
        token = encode_invite(cred.id, new_nonce(self._rng), self._clock() + self._ttl, self._key)
        return {"token": token, "link": LINK_PREFIX + token}

    def _accept(self, query, body) -> dict:
        data = self._json_body(body, required={"token": str, "id": str, "secret": str}, optional={})
        cred = self._cred(data)
        self.store.authenticate(cred)
        invite = decode_invite(data["token"], self._key, self._clock())
        try:
            self.store.redeem_invite(cred, invite.sharer, b64u(invite.nonce))
        except SelfShareError:
            raise ApiError(409, "self_accept") from None
        return {"sharer": invite.sharer}

    def _revoke(self, query, body) -> dict:
        data = self._json_body(
            body,
            required={"id": str, "secret": str, "sharer": str, "reader": str},
            optional={},
        )
        self.store.revoke(self._cred(data), self._pid(data, "sharer"), self._pid(data, "reader"))
        return {}

    def _readers(self, query, body) -> list:
        data = self._params(query, required={"id": str, "secret": str}, optional={})
        return self.store.readers_of(self._cred(data))

    def _sharers(self, query, body) -> list:
        data = self._params(query, required={"id": str, "secret": str}, optional={})
        return self.store.sharers_to(self._cred(data))

    def _history(self, query, body) -> list:
        data = self._params(
            query,
            required={"id": str, "secret": str, "target": str},
            optional={"limit": str},
        )
        limit = None
        if "limit" in data:
            if not data["limit"].isdigit():
                raise ApiError(400, "bad_value", "limit must be a non-negative integer")
            limit = int(data["limit"])
        rows = self.store.history_of(self._cred(data), self._pid(data, "target"), limit)
        return [c.to_wire() for c in rows]

    def _delete(self, query, body) -> dict:
        data = self._json_body(body, required={"id": str, "secret": str}, optional={})
        self.store.delete_participant(self._cred(data))
        return {}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    api: WatnApi = None  # set by serve()

    def _dispatch(self, method: str) -> None:
        parts = urlsplit(self.path)
        query = dict(parse_qsl(parts.query, keep_blank_values=True))
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            status, payload = 400, b'{"error":"bad_json"}'
        else:
            body = self.rfile.read(length) if length else b""
            status, payload = self.api.handle(method, parts.path, query, body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)


def serve(api: WatnApi, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Bind and return a threaded HTTP server; call serve_forever() to run it."""
    handler = type("BoundHandler", (_Handler,), {"api": api})
    return ThreadingHTTPServer((host, port), handler)


class SnapshotTimer:
    """Background loop writing periodic snapshots; stop() writes a final one."""

    def __init__(self, store: WatnStore, path: str, interval_s: float):
        self._store = store
        self._path = path
        self._interval = interval_s
        self._halt = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        while not self._halt.wait(self._interval):
            self._store.snapshot(self._path)

    def stop(self) -> None:
        self._halt.set()
        self._thread.join(timeout=5)
        self._store.snapshot(self._path)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = ApiConfig.from_env()
    api = WatnApi.from_config(cfg)
    host, _, port = cfg.bind.rpartition(":")
    server = serve(api, host or "127.0.0.1", int(port))
    signal.signal(signal.SIGTERM, lambda *_: _interrupt())
    timer = None
    if cfg.snapshot_path:
        timer = SnapshotTimer(api.store, cfg.snapshot_path, cfg.snapshot_interval_s)
        timer.start()
    log.info("listening on %s:%s", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
        if timer is not None:
            timer.stop()  # writes the final snapshot
    return 0


def _interrupt():
    raise KeyboardInterrupt


if __name__ == "__main__":
    raise SystemExit(main())
