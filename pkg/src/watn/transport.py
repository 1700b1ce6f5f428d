"""How a client reaches a server: real HTTP, or an in-process API for tests.

All client traffic funnels through one `request` call, which is what lets the
privacy checks capture and grep every byte that would cross the wire.
"""

from __future__ import annotations

import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field

from .model import WatnError


class TransportError(WatnError):
    """Network-level failure: server unreachable, timeout, connection reset."""

    code = "unreachable"


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, method: str, path: str, query: dict | None = None, body: bytes | None = None) -> tuple[int, bytes]:
        url = self.base_url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        req = urllib.request.Request(url, data=body, method=method)
        if body is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as err:
            return err.code, err.read()
        except (urllib.error.URLError, OSError, TimeoutError) as err:
            raise TransportError(str(err)) from err


class LocalTransport:
    """Calls a WatnApi directly; same request/response bytes, no sockets."""

    def __init__(self, api):
        self.api = api

    def request(self, method: str, path: str, query: dict | None = None, body: bytes | None = None) -> tuple[int, bytes]:
        return self.api.handle(method, path, {k: str(v) for k, v in (query or {}).items()}, body or b"")


@dataclass
class RequestRecord:
    method: str
    path: str
    query: dict
    body: bytes

    def flat(self) -> str:
        """Everything the request would put on the wire, as one searchable string."""
        q = urllib.parse.urlencode(self.query) if self.query else ""
        return f"{self.method} {self.path}?{q} {self.body.decode('utf-8', 'replace')}"


@dataclass
class RecordingTransport:
    """Wraps another transport and keeps a log of every outbound request."""

    inner: object
    records: list[RequestRecord] = field(default_factory=list)

    def request(self, method: str, path: str, query: dict | None = None, body: bytes | None = None) -> tuple[int, bytes]:
        self.records.append(RequestRecord(method, path, dict(query or {}), body or b""))
        return self.inner.request(method, path, query, body)
