"""Client half of the identity/location split.

Holds everything the server must never see: the legend (ID -> display name),
the own credential, and the offline cache. All of it lives in one local JSON
file; the only fields that ever reach a request are the `id`/`secret` pair.
"""

from __future__ import annotations

import json
import os
import tempfile
import urllib.parse
from dataclasses import dataclass, field
from typing import Any, Callable

from .model import (
    Credential,
    GeoPoint,
    NAME_MAX_BYTES,
    WatnError,
    canonical_json,
    is_participant_id,
    now_ms,
)
from .transport import TransportError

DEFAULT_STATE_PATH = "~/.watn/state.json"
LINK_SCHEME = "watn://"


class ServerUnreachableError(WatnError):
    code = "unreachable"


class ServerRejectedError(WatnError):
    """Non-200 response; `remote_code` is the server's stable error string."""

    def __init__(self, status: int, remote_code: str):
        super().__init__(f"server rejected request: {status} {remote_code}")
        self.status = status
        self.remote_code = remote_code
        self.code = remote_code


class InviteRejectedError(ServerRejectedError):
    pass


class PartialCommitError(WatnError):
    """Phase 1 committed on the server but the local legend write failed.

    Repair: retry the local half via set_name(sharer, name). Until then the
    peer renders under its raw ID, which is an ordinary display state.
    """

    code = "partial_commit"

    def __init__(self, sharer: str):
        super().__init__(f"edge created but legend write failed for {sharer}")
        self.sharer = sharer


class NoCacheError(WatnError):
    code = "no_cache"


class NotBootstrappedError(WatnError):
    code = "not_bootstrapped"


class BadIdError(WatnError):
    code = "bad_id"


class NameTooLongError(WatnError):
    code = "name_too_long"


class CorruptStateError(WatnError):
    """The state file is unreadable. Deliberately not auto-reset: it may hold
    the only copy of the credential for a server-side ID."""

    code = "corrupt_state"


@dataclass
class LocalState:
    own: Credential | None = None
    legend: dict[str, str] = field(default_factory=dict)
    cache: list[dict] | None = None
    fetched_ts: int | None = None

    def to_wire(self) -> dict:
        return {
            "own": self.own.to_wire() if self.own else None,
            "legend": dict(self.legend),
            "cache": self.cache,
            "fetched_ts": self.fetched_ts,
        }

    @classmethod
    def from_wire(cls, wire: dict) -> "LocalState":
        own = Credential.from_wire(wire["own"]) if wire.get("own") else None
        return cls(own, dict(wire.get("legend") or {}), wire.get("cache"), wire.get("fetched_ts"))


class StateFile:
    """Atomic JSON persistence for LocalState; the browser-storage analogue."""

    def __init__(self, path: str):
        self.path = os.path.expanduser(path)

    def load(self) -> LocalState:
        if not os.path.exists(self.path):
            return LocalState()
        with open(self.path, "r", encoding="utf-8") as fh:
            raw = fh.read()
        try:
            return LocalState.from_wire(json.loads(raw))
        except (ValueError, KeyError, TypeError, AttributeError) as err:
            raise CorruptStateError(f"unreadable state file {self.path}: {err}") from err

    def save(self, state: LocalState) -> None:
        directory = os.path.dirname(os.path.abspath(self.path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".watn-state-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(canonical_json(state.to_wire()))
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def erase(self) -> None:
        if os.path.exists(self.path):
            os.unlink(self.path)


@dataclass(frozen=True)
class ResolvedEntry:
    """A feed row after legend substitution; `display` falls back to the raw ID."""

    id: str
    display: str
    point: GeoPoint
    ts: int
    msg: str | None = None

    def to_wire(self) -> dict:
        wire: dict[str, Any] = {
            "id": self.id,
            "display": self.display,
            "lat": self.point.lat,
            "lng": self.point.lng,
            "ts": self.ts,
        }
        if self.msg is not None:
            wire["msg"] = self.msg
        return wire


@dataclass(frozen=True)
class FeedView:
    entries: list[ResolvedEntry]
    staleness_ms: int
    from_cache: bool


def resolve(raw_entries: list[dict], legend: dict[str, str]) -> list[ResolvedEntry]:
    """Pure, order-preserving ID -> name substitution with raw-ID fallback."""
    return [
        ResolvedEntry(
            id=row["id"],
            display=legend.get(row["id"], row["id"]),
            point=GeoPoint(float(row["lat"]), float(row["lng"])),
            ts=int(row["ts"]),
            msg=row.get("msg"),
        )
        for row in raw_entries
    ]


def extract_token(link_or_token: str) -> str:
    """Accept either the bare token or the full watn:// deep link."""
    if link_or_token.startswith(LINK_SCHEME):
        query = urllib.parse.urlsplit(link_or_token).query
        params = dict(urllib.parse.parse_qsl(query))
        token = params.get("token", "")
        if not token:
            raise ValueError("link carries no token")
        return token
    return link_or_token


def default_state_path(env=os.environ) -> str:
    return env.get("WATN_STATE") or DEFAULT_STATE_PATH


class WatnClient:
    def __init__(
        self,
        transport,
        state_path: str | None = None,
        state_file: StateFile | None = None,
        clock: Callable[[], int] = now_ms,
    ):
        self._transport = transport
        self._state_file = state_file or StateFile(state_path or default_state_path())
        self._state = self._state_file.load()
        self._clock = clock

    # -- plumbing -----------------------------------------------------------

    def _call(self, method: str, path: str, query: dict | None = None, body: dict | None = None) -> Any:
        payload = canonical_json(body).encode("utf-8") if body is not None else None
        try:
            status, raw = self._transport.request(method, path, query, payload)
        except TransportError as err:
            raise ServerUnreachableError(str(err)) from err
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as err:
            raise ServerRejectedError(status, "bad_response") from err
        if status != 200:
            raise ServerRejectedError(status, data.get("error", "error") if isinstance(data, dict) else "error")
        return data

    def _own(self) -> Credential:
        if self._state.own is None:
            raise NotBootstrappedError("run bootstrap first")
        return self._state.own

    def _auth(self) -> dict:
        own = self._own()
        return {"id": own.id, "secret": own.secret}

    # -- identity ------------------------------------------------------------

    def bootstrap(self) -> Credential:
        """Restore the own credential from local storage, or register a fresh one."""
        if self._state.own is not None:
            return self._state.own
        data = self._call("POST", "/register")
        cred = Credential(data["id"], data["secret"])
        self._state.own = cred
        self._state_file.save(self._state)
        return cred

    def whoami(self) -> Credential | None:
        return self._state.own

    def wipe(self) -> None:
        """Delete the ID server-side, then erase all local state including the legend."""
        self._call("POST", "/delete", body=self._auth())
        self._state = LocalState()
        self._state_file.erase()

    # -- legend (purely local; no operation here touches the network) ----------

    def set_name(self, pid: str, name: str) -> None:
        if not is_participant_id(pid):
            raise BadIdError(f"not a participant ID: {pid!r}")
        self._check_name(name)
        self._state.legend[pid] = name
        self._state_file.save(self._state)

    def remove_name(self, pid: str) -> None:
        if not is_participant_id(pid):
            raise BadIdError(f"not a participant ID: {pid!r}")
        self._state.legend.pop(pid, None)
        self._state_file.save(self._state)

    def list_legend(self) -> dict[str, str]:
        return dict(self._state.legend)

    @staticmethod
    def _check_name(name: str) -> None:
        if not name:
            raise NameTooLongError("name must be non-empty")
        if len(name.encode("utf-8")) > NAME_MAX_BYTES:
            raise NameTooLongError(f"name exceeds {NAME_MAX_BYTES} bytes")

    # -- sharing ---------------------------------------------------------------

    def share(self, display_hint: str | None = None) -> str:
        """Obtain an invite link for out-of-band delivery (email/SMS stand-in).

        `display_hint` is a label for the caller's own delivery message; it is
        never transmitted and never stored.
        """
        data = self._call("POST", "/invite", body=self._auth())
        return data["link"]

    def accept_invite(self, link_or_token: str, name: str) -> str:
        """Two-phase accept: server edge first, local legend second.

        A phase-2 failure raises PartialCommitError(sharer); the server edge
        stays, and retrying set_name(sharer, name) completes the commit.
        """
        token = extract_token(link_or_token)
        self._check_name(name)
        body = dict(self._auth())
        body["token"] = token
        try:
            data = self._call("POST", "/accept", body=body)
        except ServerRejectedError as err:
            if err.status == 401:
                raise
            raise InviteRejectedError(err.status, err.remote_code) from err
        sharer = data["sharer"]
        previous = self._state.legend.get(sharer)
        self._state.legend[sharer] = name
        try:
            self._state_file.save(self._state)
        except OSError:
            # roll memory back to what disk still holds
            if previous is None:
                del self._state.legend[sharer]
            else:
                self._state.legend[sharer] = previous
            raise PartialCommitError(sharer) from None
        return sharer

    def revoke_peer(self, peer: str, direction: str) -> None:
        """Drop an edge: `incoming` stops the peer sharing to us, `outgoing` stops us."""
        if not is_participant_id(peer):
            raise BadIdError(f"not a participant ID: {peer!r}")
        if direction not in ("incoming", "outgoing"):
            raise ValueError("direction must be 'incoming' or 'outgoing'")
        own = self._own().id
        sharer, reader = (peer, own) if direction == "incoming" else (own, peer)
        body = dict(self._auth())
        body.update(sharer=sharer, reader=reader)
        self._call("POST", "/revoke", body=body)

    def readers(self) -> list[str]:
        return self._call("GET", "/readers", query=self._auth())

    def sharers(self) -> list[str]:
        return self._call("GET", "/sharers", query=self._auth())

    # -- locations ----------------------------------------------------------------

    def checkin_here(self, lat: float, lng: float, msg: str | None = None) -> int:
        body = dict(self._auth())
        body.update(lat=lat, lng=lng)
        if msg is not None:
            body["msg"] = msg
        return self._call("POST", "/checkin", body=body)["ts"]

    def refresh(self) -> FeedView:
        """Fetch the feed and cache the raw rows; offline, falls back to cached()."""
        self._own()
        try:
            rows = self._call("GET", "/feed", query=self._auth())
        except ServerUnreachableError:
            return self.cached()
        self._state.cache = rows
        self._state.fetched_ts = self._clock()
        self._state_file.save(self._state)
        return FeedView(resolve(rows, self._state.legend), 0, False)

    def cached(self) -> FeedView:
        """Resolve the cached rows against the *current* legend; renames apply offline."""
        if self._state.cache is None:
            raise NoCacheError("no feed has ever been fetched")
        staleness = max(self._clock() - (self._state.fetched_ts or 0), 0)
        return FeedView(resolve(self._state.cache, self._state.legend), staleness, True)

    def history(self, target: str, limit: int | None = None) -> list[dict]:
        if not is_participant_id(target):
            raise BadIdError(f"not a participant ID: {target!r}")
        query = dict(self._auth())
        query["target"] = target
        if limit is not None:
            query["limit"] = str(limit)
        return self._call("GET", "/history", query=query)
