"""Scenario runner: multi-client flows driven end-to-end against a fresh server.

Two modes. `run` executes a line-oriented script through the real CLI against a
server spawned on an ephemeral port, then greps the server snapshot for every
display name the script used. `fuzz` throws random operation sequences at an
in-process server and checks every query against the naive reference model.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import io
import json
import random
import re
import shlex
import sys
import tempfile
import threading
from dataclasses import dataclass, field

from .cli import main as cli_main
from .client import WatnClient
from .model import Credential
from .reference import ReferenceModel
from .server import WatnApi, serve
from .store import CounterClock, WatnStore
from .transport import LocalTransport, RecordingTransport

TEST_CLOCK_EPOCH = 1_700_000_000_000

_EXPECT_ERR_CODES = {"usage": 1, "auth": 2, "network": 3, "rejected": 4, "partial": 5}
_LABEL_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")


class ScenarioParseError(Exception):
    pass


@dataclass
class Step:
    lineno: int
    label: str
    argv: list[str]
    expect: str  # ok | err | out | not
    value: str = ""

    def describe(self) -> str:
        return f"{self.label}: {' '.join(self.argv)}"


@dataclass
class Scenario:
    labels: list[str]
    steps: list[Step]
    names: list[str] = field(default_factory=list)  # display names the script introduces


def parse_scenario(text: str) -> Scenario:
    labels: list[str] = []
    steps: list[Step] = []
    names: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not labels:
            head, _, rest = line.partition(":")
            if head.strip() != "clients":
                raise ScenarioParseError(f"line {lineno}: expected `clients: <labels>` header")
            labels = rest.split()
            for label in labels:
                if not _LABEL_RE.match(label):
                    raise ScenarioParseError(f"line {lineno}: bad client label {label!r}")
            if not labels:
                raise ScenarioParseError(f"line {lineno}: at least one client label required")
            continue
        if " => " not in line:
            raise ScenarioParseError(f"line {lineno}: missing ` => ` expectation")
        command_part, expect_part = line.rsplit(" => ", 1)
        label, sep, command = command_part.partition(":")
        label = label.strip()
        if not sep:
            raise ScenarioParseError(f"line {lineno}: missing `label:` prefix")
        if label not in labels:
            raise ScenarioParseError(f"line {lineno}: undefined client label {label!r}")
        try:
            argv = shlex.split(command)
        except ValueError as exc:
            raise ScenarioParseError(f"line {lineno}: {exc}") from exc
        if not argv:
            raise ScenarioParseError(f"line {lineno}: empty command")

        expect_part = expect_part.strip()
        if expect_part == "ok":
            step = Step(lineno, label, argv, "ok")
        elif expect_part.startswith("err:"):
            kind = expect_part[4:]
            if kind not in _EXPECT_ERR_CODES:
                raise ScenarioParseError(f"line {lineno}: unknown error class {kind!r}")
            step = Step(lineno, label, argv, "err", kind)
        elif expect_part.startswith("out:"):
            step = Step(lineno, label, argv, "out", expect_part[4:])
        elif expect_part.startswith("not:"):
            step = Step(lineno, label, argv, "not", expect_part[4:])
        else:
            raise ScenarioParseError(f"line {lineno}: bad expectation {expect_part!r}")
        steps.append(step)

        if argv[0] == "accept" and "--name" in argv:
            names.append(argv[argv.index("--name") + 1])
        elif argv[0] == "name" and len(argv) >= 3:
            names.append(argv[2])
    if not labels:
        raise ScenarioParseError("empty scenario: no clients header")
    return Scenario(labels, steps, names)


class ScenarioRunner:
    """Spawns a server on an ephemeral port and drives the CLI step by step."""

    def __init__(self, scenario: Scenario, seed: int | None = None, out=None):
        self.scenario = scenario
        self.seed = seed
        self.out = out if out is not None else sys.stdout
        if seed is not None:
            rng = random.Random(seed)
            clock = CounterClock(TEST_CLOCK_EPOCH)
            key = hashlib.sha256(f"watn-scenario-{seed}".encode()).digest()
            self.store = WatnStore(clock=clock, rng=rng)
            self.api = WatnApi(self.store, key, clock=clock, rng=rng)
        else:
            self.store = WatnStore()
            self.api = WatnApi(self.store, hashlib.sha256(b"watn-scenario").digest())
        self._last_token: str | None = None
        self._last_link: str | None = None

    def run(self) -> bool:
        httpd = serve(self.api, "127.0.0.1", 0)
        thread = threading.Thread(target=lambda: httpd.serve_forever(poll_interval=0.02), daemon=True)
        thread.start()
        url = "http://127.0.0.1:%d" % httpd.server_address[1]
        passed = 0
        failed = 0
        try:
            with tempfile.TemporaryDirectory(prefix="watn-scn-") as state_dir:
                state_paths = {label: f"{state_dir}/{label}.json" for label in self.scenario.labels}
                for step in self.scenario.steps:
                    ok, detail = self._exec_step(step, url, state_paths)
                    if ok:
                        passed += 1
                        print(f"PASS {step.describe()}", file=self.out)
                    else:
                        failed += 1
                        print(f"FAIL {step.describe()} ({detail})", file=self.out)
        finally:
            httpd.shutdown()
            httpd.server_close()
        privacy_ok = self._privacy_report()
        print(
            f"scenario: {passed}/{passed + failed} steps passed, "
            f"privacy {'OK' if privacy_ok else 'LEAKED'}",
            file=self.out,
        )
        return failed == 0 and privacy_ok

    def _exec_step(self, step: Step, url: str, state_paths: dict[str, str]) -> tuple[bool, str]:
        try:
            argv_tail = [self._substitute(arg, state_paths) for arg in step.argv]
        except KeyError as exc:
            return False, f"unresolvable variable {exc.args[0]!r}"
        argv = ["--server", url, "--state", state_paths[step.label]] + argv_tail
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            rc = cli_main(argv)
        out = stdout.getvalue()
        if step.argv[0] == "invite" and rc == 0:
            token = re.search(r"^token: (\S+)$", out, re.M)
            link = re.search(r"^link: (\S+)$", out, re.M)
            self._last_token = token.group(1) if token else None
            self._last_link = link.group(1) if link else None

        if step.expect == "ok":
            return rc == 0, f"rc={rc} {stderr.getvalue().strip()}"
        if step.expect == "err":
            want = _EXPECT_ERR_CODES[step.value]
            return rc == want, f"rc={rc}, wanted {want}"
        if step.expect == "out":
            if rc != 0:
                return False, f"rc={rc} {stderr.getvalue().strip()}"
            return step.value in out, f"output was: {out.strip()!r}"
        if step.expect == "not":
            if rc != 0:
                return False, f"rc={rc} {stderr.getvalue().strip()}"
            return step.value not in out, f"output was: {out.strip()!r}"
        return False, "unknown expectation"

    def _substitute(self, arg: str, state_paths: dict[str, str]) -> str:
        if arg == "@token":
            if self._last_token is None:
                raise KeyError("@token")
            return self._last_token
        if arg == "@link":
            if self._last_link is None:
                raise KeyError("@link")
            return self._last_link
        if arg.startswith("@id:"):
            label = arg[4:]
            path = state_paths.get(label)
            if path is None:
                raise KeyError(arg)
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    state = json.load(fh)
                return state["own"]["id"]
            except (OSError, KeyError, TypeError, ValueError):
                raise KeyError(arg) from None
        return arg

    def _privacy_report(self) -> bool:
        payload = self.store.serialize()
        clean = True
        for name in self.scenario.names:
            leaked = name.encode("utf-8") in payload
            clean = clean and not leaked
            verdict = "LEAKED" if leaked else "absent from server snapshot: OK"
            print(f"privacy: {name!r} {verdict}", file=self.out)
        if not self.scenario.names:
            print("privacy: no display names introduced by this script", file=self.out)
        return clean


@dataclass
class SimPeer:
    label: str
    client: WatnClient
    cred: Credential


class FuzzDriver:
    """Applies random operations to the API and the reference model in lockstep.

    Every mutation that succeeds on the server is recorded into the model;
    queries compare server answers against full-log replays.
    """

    def __init__(
        self,
        api: WatnApi,
        rng: random.Random,
        state_dir: str,
        max_peers: int = 8,
        namer=None,
        record_requests: bool = False,
        compare: bool = True,
    ):
        self.api = api
        self.rng = rng
        self.state_dir = state_dir
        self.max_peers = max_peers
        self.compare = compare
        self.model = ReferenceModel(history_cap=api.store.history_cap)
        base = LocalTransport(api)
        self.recorder = RecordingTransport(base) if record_requests else None
        self.transport = self.recorder or base
        self.peers: list[SimPeer] = []
        self.mismatches: list[str] = []
        self.ops_run = 0
        self.queries_run = 0
        self._counter = 0
        self._namer = namer or (lambda: f"peer-{self._next()}")
        self.names_used: list[str] = []
        self._edges: set[tuple[str, str]] = set()  # generation bookkeeping, not the oracle

    def _next(self) -> int:
        self._counter += 1
        return self._counter

    def _spawn_peer(self) -> SimPeer:
        label = f"c{self._next()}"
        client = WatnClient(self.transport, state_path=f"{self.state_dir}/{label}.json")
        cred = client.bootstrap()
        self.model.register(cred.id)
        peer = SimPeer(label, client, cred)
        self.peers.append(peer)
        return peer

    def _pick(self) -> SimPeer:
        return self.rng.choice(self.peers)

    # -- one random operation ------------------------------------------------

    def step(self) -> None:
        self.ops_run += 1
        if not self.peers:
            self._spawn_peer()
            return
        roll = self.rng.random()
        if roll < 0.30:
            self._op_checkin()
        elif roll < 0.45:
            self._op_invite_accept()
        elif roll < 0.53:
            self._op_revoke()
        elif roll < 0.63:
            self._op_rename()
        elif roll < 0.68:
            if len(self.peers) < self.max_peers:
                self._spawn_peer()
        elif roll < 0.70:
            self._op_delete()
        elif roll < 0.85:
            self._check_feed(self._pick())
        elif roll < 0.93:
            self._check_adjacency(self._pick())
        else:
            self._check_history(self._pick())

    def run(self, n_ops: int, verify_every: int | None = None) -> None:
        for i in range(1, n_ops + 1):
            self.step()
            if verify_every and i % verify_every == 0:
                self.verify_all()

    def _op_checkin(self) -> None:
        peer = self._pick()
        lat = self.rng.uniform(-90.0, 90.0)
        lng = self.rng.uniform(-180.0, 180.0)
        msg = f"m{self._next()}" if self.rng.random() < 0.3 else None
        ts = peer.client.checkin_here(lat, lng, msg)
        self.model.checkin(peer.cred.id, lat, lng, ts, msg)

    def _op_invite_accept(self) -> None:
        if len(self.peers) < 2:
            return
        sharer, acceptor = self.rng.sample(self.peers, 2)
        link = sharer.client.share()
        name = self._namer()
        self.names_used.append(name)
        acceptor.client.accept_invite(link, name)
        self.model.add_edge(sharer.cred.id, acceptor.cred.id)
        self._edges.add((sharer.cred.id, acceptor.cred.id))

    def _op_revoke(self) -> None:
        if not self._edges:
            return
        alive = {p.cred.id: p for p in self.peers}
        sharer_id, reader_id = self.rng.choice(sorted(self._edges))
        if self.rng.random() < 0.5:
            alive[sharer_id].client.revoke_peer(reader_id, "outgoing")
        else:
            alive[reader_id].client.revoke_peer(sharer_id, "incoming")
        self.model.revoke(sharer_id, reader_id)
        self._edges.discard((sharer_id, reader_id))

    def _op_rename(self) -> None:
        peer = self._pick()
        known = sorted(peer.client.list_legend())
        target = self.rng.choice(known) if known and self.rng.random() < 0.7 else self._pick().cred.id
        if target == peer.cred.id:
            return
        name = self._namer()
        self.names_used.append(name)
        peer.client.set_name(target, name)

    def _op_delete(self) -> None:
        if len(self.peers) <= 1:
            return
        peer = self._pick()
        peer.client.wipe()
        self.model.delete(peer.cred.id)
        self.peers.remove(peer)
        self._edges = {(s, r) for (s, r) in self._edges if peer.cred.id not in (s, r)}

    # -- oracle comparisons -------------------------------------------------------

    @staticmethod
    def _feed_key(rows) -> list[tuple]:
        return [(r["id"], r["lat"], r["lng"], r["ts"], r.get("msg")) for r in rows]

    def _check_feed(self, peer: SimPeer) -> None:
        self.queries_run += 1
        view = peer.client.refresh()
        if not self.compare:
            return
        got = [(e.id, e.point.lat, e.point.lng, e.ts, e.msg) for e in view.entries]
        want = self._feed_key(self.model.feed(peer.cred.id))
        if got != want:
            self.mismatches.append(f"feed({peer.label}): got {got!r} want {want!r}")

    def _check_adjacency(self, peer: SimPeer) -> None:
        self.queries_run += 1
        got = (peer.client.readers(), peer.client.sharers())
        if not self.compare:
            return
        want = (self.model.readers_of(peer.cred.id), self.model.sharers_to(peer.cred.id))
        if got != want:
            self.mismatches.append(f"adjacency({peer.label}): got {got!r} want {want!r}")

    def _check_history(self, peer: SimPeer) -> None:
        self.queries_run += 1
        sharers = sorted(s for (s, r) in self._edges if r == peer.cred.id)
        target = self.rng.choice(sharers) if sharers and self.rng.random() < 0.7 else peer.cred.id
        limit = self.rng.choice([None, 1, 2, 5])
        rows = peer.client.history(target, limit)
        if not self.compare:
            return
        got = [(r["lat"], r["lng"], r["ts"], r.get("msg")) for r in rows]
        want = [(r["lat"], r["lng"], r["ts"], r["msg"]) for r in self.model.history_of(target, limit)]
        if got != want:
            self.mismatches.append(f"history({peer.label},{target},{limit}): got {got!r} want {want!r}")

    def verify_all(self) -> list[str]:
        """Full sweep: every live peer's feed, adjacency, and history vs the model."""
        before = len(self.mismatches)
        prior, self.compare = self.compare, True
        try:
            for peer in list(self.peers):
                self._check_feed(peer)
                self._check_adjacency(peer)
                got = [(r["lat"], r["lng"], r["ts"], r.get("msg")) for r in peer.client.history(peer.cred.id)]
                want = [(r["lat"], r["lng"], r["ts"], r["msg"]) for r in self.model.history_of(peer.cred.id)]
                if got != want:
                    self.mismatches.append(f"history({peer.label}): got {got!r} want {want!r}")
                self.queries_run += 1
        finally:
            self.compare = prior
        return self.mismatches[before:]

    def leaks(self, needle: str) -> list[str]:
        """Every place `needle` shows up where the server could see it."""
        found = []
        if needle.encode("utf-8") in self.api.store.serialize():
            found.append("server snapshot")
        if self.recorder is not None:
            for record in self.recorder.records:
                if needle in record.flat():
                    found.append(f"request {record.method} {record.path}")
        return found


def run_fuzz(seed: int, n_ops: int, max_peers: int = 8, out=None) -> bool:
    out = out if out is not None else sys.stdout
    rng = random.Random(seed)
    clock = CounterClock(TEST_CLOCK_EPOCH)
    store = WatnStore(clock=clock, rng=random.Random(seed + 1))
    api = WatnApi(
        store,
        hashlib.sha256(f"watn-fuzz-{seed}".encode()).digest(),
        clock=clock,
        rng=random.Random(seed + 2),
    )
    with tempfile.TemporaryDirectory(prefix="watn-fuzz-") as state_dir:
        driver = FuzzDriver(api, rng, state_dir, max_peers=max_peers, record_requests=True)
        driver.run(n_ops)
        driver.verify_all()
        leaked = [name for name in set(driver.names_used) if driver.leaks(name)]
    ok = not driver.mismatches and not leaked
    for mismatch in driver.mismatches[:10]:
        print(f"MISMATCH {mismatch}", file=out)
    for name in leaked:
        print(f"LEAK {name!r} visible to server", file=out)
    print(
        f"fuzz: seed={seed} ops={driver.ops_run} queries={driver.queries_run} "
        f"mismatches={len(driver.mismatches)} leaks={len(leaked)}",
        file=out,
    )
    return ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="watn-scenario", description="Drive multi-client WATN flows.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a scenario script against a fresh server")
    p.add_argument("script", help="path to a .scn file")
    p.add_argument("--seed", type=int, default=None, help="deterministic IDs, nonces, timestamps")

    p = sub.add_parser("fuzz", help="random operations checked against the reference model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops", type=int, default=1000)
    p.add_argument("--participants", type=int, default=8)

    args = parser.parse_args(argv)
    if args.command == "run":
        try:
            with open(args.script, "r", encoding="utf-8") as fh:
                scenario = parse_scenario(fh.read())
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        except ScenarioParseError as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return 1
        return 0 if ScenarioRunner(scenario, seed=args.seed).run() else 1
    return 0 if run_fuzz(args.seed, args.ops, args.participants) else 1


if __name__ == "__main__":
    raise SystemExit(main())
