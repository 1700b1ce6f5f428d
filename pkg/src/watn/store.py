"""Server-side persistence: anonymous location histories, the ID-only share graph, tombstones.

The store never sees a display name. Its only string contents are participant IDs,
secret hashes, and opaque check-in messages.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from collections import deque
from typing import Callable

from .model import (
    CheckIn,
    Credential,
    FeedEntry,
    WatnError,
    canonical_json,
    hash_secret,
    new_participant_id,
    new_secret,
    now_ms,
    secret_matches,
    validate_geo,
    validate_msg,
)

DEFAULT_HISTORY_CAP = 1000
SNAPSHOT_MAGIC = b"WATN1"


class AuthFailedError(WatnError):
    code = "auth_failed"


class SelfShareError(WatnError):
    code = "self_share"


class UnknownParticipantError(WatnError):
    code = "unknown_participant"


class NotPartyError(WatnError):
    code = "not_party"


class NotSharedError(WatnError):
    code = "not_shared"


class UsedTokenError(WatnError):
    code = "used_token"


class CorruptSnapshotError(WatnError):
    code = "corrupt_snapshot"


system_clock = now_ms


class CounterClock:
    """Deterministic clock for tests: starts at `start`, advances `step` ms per call."""

    def __init__(self, start: int, step: int = 1000):
        self._next = int(start)
        self._step = int(step)
        self._lock = threading.Lock()

    def __call__(self) -> int:
        with self._lock:
            now = self._next
            self._next += self._step
            return now


class WatnStore:
    """Linearizable in-memory store; every public operation is atomic under one lock."""

    def __init__(
        self,
        history_cap: int = DEFAULT_HISTORY_CAP,
        clock: Callable[[], int] = system_clock,
        rng=None,
    ):
        self.history_cap = int(history_cap)
        self._clock = clock
        self._rng = rng
        self._lock = threading.RLock()
        self._credentials: dict[str, str] = {}  # id -> sha256(secret)
        self._locations: dict[str, deque[CheckIn]] = {}
        self._readers: dict[str, set[str]] = {}  # sharer -> readers
        self._sharers: dict[str, set[str]] = {}  # reader -> sharers (exact transpose)
        self._retired_ids: set[str] = set()
        self._redeemed_nonces: set[str] = set()

    # -- auth ------------------------------------------------------------

    def _check_auth(self, cred: Credential) -> None:
        stored = self._credentials.get(cred.id)
        if stored is None or not secret_matches(cred.secret, stored):
            raise AuthFailedError("unknown ID or bad secret")

    def authenticate(self, cred: Credential) -> None:
        with self._lock:
            self._check_auth(cred)

    # -- registration and deletion ----------------------------------------

    def register(self) -> Credential:
        with self._lock:
            while True:
                pid = new_participant_id(self._rng)
                if pid not in self._credentials and pid not in self._retired_ids:
                    break
            secret = new_secret(self._rng)
            self._credentials[pid] = hash_secret(secret)
            self._locations[pid] = deque(maxlen=self.history_cap)
            self._readers[pid] = set()
            self._sharers[pid] = set()
            return Credential(pid, secret)

    def delete_participant(self, cred: Credential) -> None:
        with self._lock:
            self._check_auth(cred)
            pid = cred.id
            del self._credentials[pid]
            del self._locations[pid]
            for reader in self._readers.pop(pid):
                self._sharers[reader].discard(pid)
            for sharer in self._sharers.pop(pid):
                self._readers[sharer].discard(pid)
            self._retired_ids.add(pid)

    # -- locations ---------------------------------------------------------

    def checkin(self, cred: Credential, lat: float, lng: float, msg: str | None = None) -> CheckIn:
        with self._lock:
            self._check_auth(cred)
            point = validate_geo(lat, lng)
            msg = validate_msg(msg)
            history = self._locations[cred.id]
            ts = self._clock()
            if history and history[-1].ts > ts:
                ts = history[-1].ts  # clocks may step back; history may not
            entry = CheckIn(point, ts, msg)
            history.append(entry)
            return entry

    def feed(self, cred: Credential) -> list[FeedEntry]:
        """Latest check-in of every sharer of the caller; one inverted-index lookup."""
        with self._lock:
            self._check_auth(cred)
            entries = []
            for sharer in sorted(self._sharers[cred.id]):
                history = self._locations[sharer]
                if history:
                    latest = history[-1]
                    entries.append(FeedEntry(sharer, latest.point, latest.ts, latest.msg))
            return entries

    def history_of(self, cred: Credential, target: str, limit: int | None = None) -> list[CheckIn]:
        with self._lock:
            self._check_auth(cred)
            if target != cred.id and cred.id not in self._readers.get(target, ()):
                raise NotSharedError("target does not share location with caller")
            history = list(self._locations[target])
            if limit is not None and limit >= 0:
                history = history[len(history) - min(limit, len(history)):]
            return history

    # -- share graph ---------------------------------------------------------

    def add_edge(self, sharer: str, reader: str) -> None:
        with self._lock:
            self._add_edge_locked(sharer, reader)

    def _add_edge_locked(self, sharer: str, reader: str) -> None:
        if sharer == reader:
            raise SelfShareError("cannot share location with oneself")
        if sharer not in self._credentials or reader not in self._credentials:
            raise UnknownParticipantError("both endpoints must be registered")
        self._readers[sharer].add(reader)
        self._sharers[reader].add(sharer)

    def redeem_invite(self, cred: Credential, sharer: str, nonce_key: str) -> None:
        """Atomically consume an invite nonce and create the edge sharer -> caller.

        Single-use: under concurrent duplicate redemption exactly one call succeeds.
        """
        with self._lock:
            self._check_auth(cred)
            if nonce_key in self._redeemed_nonces:
                raise UsedTokenError("invite already redeemed")
            if sharer not in self._credentials:
                raise UnknownParticipantError("invite sharer no longer exists")
            if sharer == cred.id:
                raise SelfShareError("cannot accept own invite")
            self._redeemed_nonces.add(nonce_key)
            self._add_edge_locked(sharer, cred.id)

    def revoke(self, cred: Credential, sharer: str, reader: str) -> None:
        with self._lock:
            self._check_auth(cred)
            if cred.id not in (sharer, reader):
                raise NotPartyError("caller is neither endpoint of the edge")
            if sharer in self._readers:
                self._readers[sharer].discard(reader)
            if reader in self._sharers:
                self._sharers[reader].discard(sharer)

    def readers_of(self, cred: Credential) -> list[str]:
        with self._lock:
            self._check_auth(cred)
            return sorted(self._readers[cred.id])

    def sharers_to(self, cred: Credential) -> list[str]:
        with self._lock:
            self._check_auth(cred)
            return sorted(self._sharers[cred.id])

    # -- snapshots -------------------------------------------------------------

    def snapshot(self, path: str) -> None:
        """Checksummed snapshot of the four tables, written atomically."""
        payload = self.serialize()
        digest = hashlib.sha256(payload).hexdigest()
        blob = SNAPSHOT_MAGIC + b"\n" + digest.encode("ascii") + b"\n" + payload
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".watn-snap-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(blob)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def restore(
        cls,
        path: str,
        history_cap: int = DEFAULT_HISTORY_CAP,
        clock: Callable[[], int] = system_clock,
        rng=None,
    ) -> "WatnStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        head, sep, rest = blob.partition(b"\n")
        if head != SNAPSHOT_MAGIC or not sep:
            raise CorruptSnapshotError("bad snapshot header")
        digest, sep, payload = rest.partition(b"\n")
        if not sep or hashlib.sha256(payload).hexdigest().encode("ascii") != digest:
            raise CorruptSnapshotError("checksum mismatch")
        try:
            tables = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptSnapshotError("unparseable payload") from exc

        store = cls(history_cap=history_cap, clock=clock, rng=rng)
        store._credentials = dict(tables["credentials"])
        store._locations = {
            pid: deque((CheckIn.from_wire(c) for c in hist), maxlen=store.history_cap)
            for pid, hist in tables["locations"].items()
        }
        store._readers = {pid: set() for pid in store._credentials}
        store._sharers = {pid: set() for pid in store._credentials}
        for sharer, readers in tables["edges"].items():
            for reader in readers:
                store._readers[sharer].add(reader)
                store._sharers[reader].add(sharer)
        store._retired_ids = set(tables["tombstones"]["ids"])
        store._redeemed_nonces = set(tables["tombstones"]["nonces"])
        return store

    def serialize(self) -> bytes:
        """The snapshot payload bytes without writing a file; consistent view."""
        with self._lock:
            return canonical_json(
                {
                    "credentials": dict(self._credentials),
                    "edges": {s: sorted(rs) for s, rs in self._readers.items()},
                    "locations": {pid: [c.to_wire() for c in hist] for pid, hist in self._locations.items()},
                    "tombstones": {
                        "ids": sorted(self._retired_ids),
                        "nonces": sorted(self._redeemed_nonces),
                    },
                }
            ).encode("utf-8")

    def participant_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._credentials)

    def retired_ids(self) -> set[str]:
        with self._lock:
            return set(self._retired_ids)
