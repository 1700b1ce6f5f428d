"""Shared domain types and wire vocabulary: IDs, coordinates, check-ins, invite tokens.

Everything here is a pure value or a pure function; safe to share across threads.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import re
import secrets
import time
from dataclasses import dataclass
from typing import Any

ID_BYTES = 16  # 128 random bits
ID_RE = re.compile(r"^[A-Za-z0-9_-]{22}$")
NONCE_BYTES = 12  # 96 bits
MSG_MAX_BYTES = 500
NAME_MAX_BYTES = 100

_NONCE_B64_RE = re.compile(r"^[A-Za-z0-9_-]{16}$")
_MAC_B64_RE = re.compile(r"^[A-Za-z0-9_-]{43}$")
_EXPIRY_RE = re.compile(r"^[0-9]{1,17}$")


class WatnError(Exception):
    """Base class for all domain errors; `code` is the stable wire identifier."""

    code = "error"


class OutOfRangeError(WatnError):
    code = "out_of_range"

    def __init__(self, axis: str):
        super().__init__(f"{axis} out of range")
        self.axis = axis


class MsgTooLongError(WatnError):
    code = "msg_too_long"


class TokenError(WatnError):
    code = "bad_token"


class BadFormatError(TokenError):
    code = "bad_token"


class BadMacError(TokenError):
    code = "bad_token"


class ExpiredError(TokenError):
    code = "expired_token"


def b64u(raw: bytes) -> str:
    """URL-safe base64 without padding."""
    return base64.urlsafe_b64encode(raw).decode("ascii").rstrip("=")


def now_ms() -> int:
    """UTC milliseconds since epoch."""
    return time.time_ns() // 1_000_000


def canonical_json(obj: Any) -> str:
    """The one JSON form used on the wire and in files: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def new_participant_id(rng=None) -> str:
    """Fresh 22-character pseudonym from 128 random bits.

    `rng` needs a `randbytes(n)` method; defaults to the OS CSPRNG. The ID carries
    no information about the participant by construction.
    """
    raw = rng.randbytes(ID_BYTES) if rng is not None else secrets.token_bytes(ID_BYTES)
    return b64u(raw)


def is_participant_id(value: Any) -> bool:
    return isinstance(value, str) and ID_RE.match(value) is not None


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lng: float


def validate_geo(lat: float, lng: float) -> GeoPoint:
    """Bounds-check WGS84 coordinates; both intervals are closed."""
    lat = float(lat)
    lng = float(lng)
    if not (-90.0 <= lat <= 90.0):
        raise OutOfRangeError("lat")
    if not (-180.0 <= lng <= 180.0):
        raise OutOfRangeError("lng")
    return GeoPoint(lat, lng)


def validate_msg(msg: str | None) -> str | None:
    """Normalize an attached message: empty collapses to absent, cap 500 UTF-8 bytes."""
    if msg is None or msg == "":
        return None
    if len(msg.encode("utf-8")) > MSG_MAX_BYTES:
        raise MsgTooLongError(f"msg exceeds {MSG_MAX_BYTES} bytes")
    return msg


@dataclass(frozen=True)
class CheckIn:
    point: GeoPoint
    ts: int  # server-assigned, UTC milliseconds
    msg: str | None = None

    def to_wire(self) -> dict:
        wire: dict[str, Any] = {"lat": self.point.lat, "lng": self.point.lng, "ts": self.ts}
        if self.msg is not None:
            wire["msg"] = self.msg
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "CheckIn":
        return cls(GeoPoint(float(wire["lat"]), float(wire["lng"])), int(wire["ts"]), wire.get("msg"))


@dataclass(frozen=True)
class FeedEntry:
    """One row of the location feed; `id`, `lat`, `lng` are the mandatory wire keys."""

    id: str
    point: GeoPoint
    ts: int
    msg: str | None = None

    def to_wire(self) -> dict:
        wire: dict[str, Any] = {"id": self.id, "lat": self.point.lat, "lng": self.point.lng, "ts": self.ts}
        if self.msg is not None:
            wire["msg"] = self.msg
        return wire

    @classmethod
    def from_wire(cls, wire: dict) -> "FeedEntry":
        return cls(wire["id"], GeoPoint(float(wire["lat"]), float(wire["lng"])), int(wire["ts"]), wire.get("msg"))


@dataclass(frozen=True)
class ShareEdge:
    """Directed record: sharer's location is readable by reader."""

    sharer: str
    reader: str

    def __post_init__(self):
        if self.sharer == self.reader:
            raise ValueError("sharer and reader must differ")


@dataclass(frozen=True)
class Credential:
    id: str
    secret: str

    def to_wire(self) -> dict:
        return {"id": self.id, "secret": self.secret}

    @classmethod
    def from_wire(cls, wire: dict) -> "Credential":
        return cls(wire["id"], wire["secret"])


def new_secret(rng=None) -> str:
    raw = rng.randbytes(32) if rng is not None else secrets.token_bytes(32)
    return b64u(raw)


def hash_secret(secret: str) -> str:
    """One-way digest; the server never stores the plaintext."""
    return hashlib.sha256(secret.encode("utf-8")).hexdigest()


def secret_matches(secret: str, stored_hash: str) -> bool:
    return hmac.compare_digest(hash_secret(secret), stored_hash)


@dataclass(frozen=True)
class InviteToken:
    sharer: str
    nonce: bytes
    expiry: int  # UTC milliseconds


def new_nonce(rng=None) -> bytes:
    return rng.randbytes(NONCE_BYTES) if rng is not None else secrets.token_bytes(NONCE_BYTES)


def _mac(payload: str, key: bytes) -> str:
    return b64u(hmac.new(key, payload.encode("ascii"), hashlib.sha256).digest())


def encode_invite(sharer: str, nonce: bytes, expiry: int, key: bytes) -> str:
    """Serialize `<sharer>.<nonce>.<expiry>.<mac>`; the sharer ID is plainly visible."""
    if not is_participant_id(sharer):
        raise ValueError("sharer is not a well-formed participant ID")
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    payload = f"{sharer}.{b64u(nonce)}.{int(expiry)}"
    return f"{payload}.{_mac(payload, key)}"


def decode_invite(token: str, key: bytes, now: int) -> InviteToken:
    """Reject with BadFormat, BadMac, or Expired; accepts only tokens this key signed."""
    parts = token.split(".")
    if len(parts) != 4:
        raise BadFormatError("token must have 4 dot-separated segments")
    sharer, nonce_b64, expiry_str, mac_b64 = parts
    if not is_participant_id(sharer):
        raise BadFormatError("bad sharer segment")
    if not _NONCE_B64_RE.match(nonce_b64):
        raise BadFormatError("bad nonce segment")
    if not _EXPIRY_RE.match(expiry_str):
        raise BadFormatError("bad expiry segment")
    if not _MAC_B64_RE.match(mac_b64):
        raise BadFormatError("bad mac segment")
    payload = f"{sharer}.{nonce_b64}.{expiry_str}"
    if not hmac.compare_digest(_mac(payload, key), mac_b64):
        raise BadMacError("mac mismatch")
    expiry = int(expiry_str)
    if expiry < now:
        raise ExpiredError("token expired")
    nonce = base64.urlsafe_b64decode(nonce_b64 + "=" * (-len(nonce_b64) % 4))
    return InviteToken(sharer, nonce, expiry)
