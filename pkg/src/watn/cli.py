"""Command-line front end over the client.

Exit codes are a stable contract for scripts:
0 ok, 1 usage, 2 auth, 3 network, 4 rejected, 5 partial commit.
"""

from __future__ import annotations

import argparse
import os
import sys

from .client import (
    BadIdError,
    InviteRejectedError,
    NameTooLongError,
    NoCacheError,
    NotBootstrappedError,
    PartialCommitError,
    ServerRejectedError,
    ServerUnreachableError,
    WatnClient,
    default_state_path,
    extract_token,
)
from .model import WatnError, canonical_json
from .transport import HttpTransport

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_AUTH = 2
EXIT_NETWORK = 3
EXIT_REJECTED = 4
EXIT_PARTIAL = 5

DEFAULT_SERVER = "http://127.0.0.1:8470"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract reserves 2 for auth."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> _Parser:
    parser = _Parser(prog="watn", description="Safe location sharing: names stay on this device.")
    parser.add_argument("--server", default=None, help="server base URL (env WATN_SERVER)")
    parser.add_argument("--state", default=None, help="local state file (env WATN_STATE)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("init", help="restore own ID from local storage or register a new one")
    sub.add_parser("whoami", help="print own ID (local only)")

    p = sub.add_parser("checkin", help="save current coordinates on the server")
    p.add_argument("lat", type=float)
    p.add_argument("lng", type=float)
    p.add_argument("-m", "--msg", default=None, help="message attached to this location")

    p = sub.add_parser("feed", help="latest locations of everyone sharing to you")
    p.add_argument("--offline", action="store_true", help="use the cached feed, no network")

    sub.add_parser("invite", help="create an invite link to share your location")

    p = sub.add_parser("accept", help="accept an invite and name the peer")
    p.add_argument("token", help="invite token or full watn:// link")
    p.add_argument("--name", required=True, help="local display name for the sharer")

    p = sub.add_parser("name", help="set a local display name for an ID")
    p.add_argument("id")
    p.add_argument("display_name")

    p = sub.add_parser("unname", help="remove the local display name for an ID")
    p.add_argument("id")

    sub.add_parser("readers", help="who can read your location")
    sub.add_parser("sharers", help="who shares location to you")

    p = sub.add_parser("history", help="recent check-ins of a sharer (or yourself)")
    p.add_argument("id")
    p.add_argument("-n", "--limit", type=int, default=20)

    p = sub.add_parser("revoke", help="cancel a share link in either direction")
    p.add_argument("id")
    direction = p.add_mutually_exclusive_group(required=True)
    direction.add_argument("--incoming", action="store_true", help="peer stops sharing to you")
    direction.add_argument("--outgoing", action="store_true", help="you stop sharing to peer")

    sub.add_parser("wipe", help="delete your ID and all server data, erase local state")
    return parser


def _display_line(entry) -> str:
    line = f"{entry.display} {entry.point.lat} {entry.point.lng} @{entry.ts}"
    if entry.msg is not None:
        line += f" {entry.msg}"
    return line


def _emit_feed(view, as_json: bool) -> None:
    if as_json:
        rows = [e.to_wire() for e in view.entries]
        if view.from_cache:
            print(canonical_json({"entries": rows, "staleness_ms": view.staleness_ms}))
        else:
            print(canonical_json(rows))
        return
    if view.from_cache:
        print(f"(cached, {view.staleness_ms} ms old)")
    for entry in view.entries:
        print(_display_line(entry))


def _run(args, client: WatnClient) -> None:
    cmd = args.command
    as_json = args.json

    if cmd == "init":
        cred = client.bootstrap()
        print(canonical_json({"id": cred.id}) if as_json else f"id: {cred.id}")
    elif cmd == "whoami":
        cred = client.whoami()
        if cred is None:
            raise NotBootstrappedError("no identity yet; run `watn init`")
        print(canonical_json({"id": cred.id}) if as_json else f"id: {cred.id}")
    elif cmd == "checkin":
        ts = client.checkin_here(args.lat, args.lng, args.msg)
        print(canonical_json({"ts": ts}) if as_json else f"checked in at {args.lat} {args.lng} @{ts}")
    elif cmd == "feed":
        view = client.cached() if args.offline else client.refresh()
        _emit_feed(view, as_json)
    elif cmd == "invite":
        link = client.share()
        token = extract_token(link)
        if as_json:
            print(canonical_json({"link": link, "token": token}))
        else:
            print(f"link: {link}")
            print(f"token: {token}")
            print("send this link to the person you want to share with")
    elif cmd == "accept":
        sharer = client.accept_invite(args.token, args.name)
        if as_json:
            print(canonical_json({"sharer": sharer}))
        else:
            print(f"now reading location of {args.name} ({sharer})")
    elif cmd == "name":
        client.set_name(args.id, args.display_name)
        print(canonical_json({}) if as_json else f"named {args.id} as {args.display_name}")
    elif cmd == "unname":
        client.remove_name(args.id)
        print(canonical_json({}) if as_json else f"unnamed {args.id}")
    elif cmd in ("readers", "sharers"):
        ids = client.readers() if cmd == "readers" else client.sharers()
        if as_json:
            print(canonical_json(ids))
        else:
            legend = client.list_legend()
            for pid in ids:
                name = legend.get(pid)
                print(f"{name} ({pid})" if name else pid)
    elif cmd == "history":
        rows = client.history(args.id, args.limit)
        if as_json:
            print(canonical_json(rows))
        else:
            for row in rows:
                line = f"{row['lat']} {row['lng']} @{row['ts']}"
                if "msg" in row:
                    line += f" {row['msg']}"
                print(line)
    elif cmd == "revoke":
        client.revoke_peer(args.id, "incoming" if args.incoming else "outgoing")
        print(canonical_json({}) if as_json else "revoked")
    elif cmd == "wipe":
        client.wipe()
        print(canonical_json({}) if as_json else "wiped; a fresh ID will be issued on next init")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or 0

    server = args.server or os.environ.get("WATN_SERVER") or DEFAULT_SERVER

    try:
        client = WatnClient(HttpTransport(server), state_path=args.state or default_state_path())
        _run(args, client)
        return EXIT_OK
    except (NotBootstrappedError, BadIdError, NameTooLongError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ServerUnreachableError as err:
        print(f"error: server unreachable ({err})", file=sys.stderr)
        return EXIT_NETWORK
    except PartialCommitError as err:
        print(
            f"error: share accepted on the server but the local name was not saved; "
            f"run `watn name {err.sharer} <name>` to finish",
            file=sys.stderr,
        )
        return EXIT_PARTIAL
    except InviteRejectedError as err:
        print(f"error: invite rejected ({err.remote_code})", file=sys.stderr)
        return EXIT_REJECTED
    except ServerRejectedError as err:
        print(f"error: {err.remote_code}", file=sys.stderr)
        return EXIT_AUTH if err.status == 401 else EXIT_REJECTED
    except NoCacheError:
        print("error: nothing cached yet; run `watn feed` online first", file=sys.stderr)
        return EXIT_REJECTED
    except WatnError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_REJECTED


if __name__ == "__main__":
    raise SystemExit(main())
