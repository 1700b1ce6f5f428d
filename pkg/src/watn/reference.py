"""Naive reference model: replays the full operation log for every query.

Deliberately shares nothing with the real store - no inverted index, no ring
buffers, no credential table. Queries rescan the log from the beginning, so any
agreement with the optimized store is evidence, not tautology.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RefOp:
    kind: str  # register | delete | checkin | add_edge | revoke
    fields: dict = field(default_factory=dict)


class ReferenceModel:
    def __init__(self, history_cap: int = 1000):
        self.history_cap = history_cap
        self.log: list[RefOp] = []

    # -- recording ---------------------------------------------------------

    def record(self, kind: str, **fields) -> None:
        self.log.append(RefOp(kind, fields))

    def register(self, pid: str) -> None:
        self.record("register", pid=pid)

    def delete(self, pid: str) -> None:
        self.record("delete", pid=pid)

    def checkin(self, pid: str, lat: float, lng: float, ts: int, msg: str | None) -> None:
        self.record("checkin", pid=pid, lat=lat, lng=lng, ts=ts, msg=msg)

    def add_edge(self, sharer: str, reader: str) -> None:
        self.record("add_edge", sharer=sharer, reader=reader)

    def revoke(self, sharer: str, reader: str) -> None:
        self.record("revoke", sharer=sharer, reader=reader)

    # -- queries (each one is a full replay) ---------------------------------

    def alive(self, pid: str) -> bool:
        state = False
        for op in self.log:
            if op.kind == "register" and op.fields["pid"] == pid:
                state = True
            elif op.kind == "delete" and op.fields["pid"] == pid:
                state = False
        return state

    def edges(self) -> set[tuple[str, str]]:
        present: set[tuple[str, str]] = set()
        for op in self.log:
            if op.kind == "add_edge":
                present.add((op.fields["sharer"], op.fields["reader"]))
            elif op.kind == "revoke":
                present.discard((op.fields["sharer"], op.fields["reader"]))
            elif op.kind == "delete":
                pid = op.fields["pid"]
                present = {(s, r) for (s, r) in present if s != pid and r != pid}
        return present

    def checkins(self, pid: str) -> list[dict]:
        """Retained history of pid, oldest first, after eviction at the cap."""
        if not self.alive(pid):
            return []
        rows = [
            {"lat": op.fields["lat"], "lng": op.fields["lng"], "ts": op.fields["ts"], "msg": op.fields["msg"]}
            for op in self.log
            if op.kind == "checkin" and op.fields["pid"] == pid
        ]
        return rows[len(rows) - min(self.history_cap, len(rows)):]

    def feed(self, reader: str) -> list[dict]:
        entries = []
        for sharer in sorted({s for (s, r) in self.edges() if r == reader}):
            rows = self.checkins(sharer)
            if rows:
                latest = dict(rows[-1])
                latest["id"] = sharer
                entries.append(latest)
        return entries

    def readers_of(self, pid: str) -> list[str]:
        return sorted({r for (s, r) in self.edges() if s == pid})

    def sharers_to(self, pid: str) -> list[str]:
        return sorted({s for (s, r) in self.edges() if r == pid})

    def history_of(self, target: str, limit: int | None = None) -> list[dict]:
        rows = self.checkins(target)
        if limit is not None and limit >= 0:
            rows = rows[len(rows) - min(limit, len(rows)):]
        return rows
