"""WATN: location sharing where the server never learns who anyone is.

The server holds (pseudonym, coordinates) and (pseudonym, pseudonym) share
edges; every client holds its own legend mapping pseudonyms to names. No
single party ever has an (identity, location) pair.
"""

from .client import (
    FeedView,
    InviteRejectedError,
    LocalState,
    NoCacheError,
    PartialCommitError,
    ResolvedEntry,
    ServerRejectedError,
    ServerUnreachableError,
    StateFile,
    WatnClient,
    resolve,
)
from .model import (
    CheckIn,
    Credential,
    FeedEntry,
    GeoPoint,
    InviteToken,
    ShareEdge,
    WatnError,
    canonical_json,
    decode_invite,
    encode_invite,
    new_participant_id,
    validate_geo,
)
from .server import ApiConfig, WatnApi, serve
from .store import CounterClock, WatnStore
from .transport import HttpTransport, LocalTransport, RecordingTransport

__all__ = [
    "ApiConfig",
    "CheckIn",
    "CounterClock",
    "Credential",
    "FeedEntry",
    "FeedView",
    "GeoPoint",
    "HttpTransport",
    "InviteRejectedError",
    "InviteToken",
    "LocalState",
    "LocalTransport",
    "NoCacheError",
    "PartialCommitError",
    "RecordingTransport",
    "ResolvedEntry",
    "ServerRejectedError",
    "ServerUnreachableError",
    "ShareEdge",
    "StateFile",
    "WatnApi",
    "WatnClient",
    "WatnError",
    "WatnStore",
    "canonical_json",
    "decode_invite",
    "encode_invite",
    "new_participant_id",
    "resolve",
    "serve",
    "validate_geo",
]
