import json

import pytest

from watn.client import (
    BadIdError,
    InviteRejectedError,
    NameTooLongError,
    NoCacheError,
    NotBootstrappedError,
    PartialCommitError,
    ServerUnreachableError,
    StateFile,
    WatnClient,
    extract_token,
    resolve,
)
from watn.model import encode_invite, new_nonce
from watn.transport import RecordingTransport, TransportError

from conftest import TEST_KEY


class FailingTransport:
    def request(self, *args, **kwargs):
        raise TransportError("connection refused")


class SwitchableTransport:
    def __init__(self, inner):
        self.inner = inner

    def request(self, *args, **kwargs):
        return self.inner.request(*args, **kwargs)


class FlakyStateFile(StateFile):
    """Fails the Nth save() call to exercise the two-phase repair path."""

    def __init__(self, path, fail_on_call: int):
        super().__init__(path)
        self.calls = 0
        self.fail_on_call = fail_on_call

    def save(self, state):
        self.calls += 1
        if self.calls == self.fail_on_call:
            raise OSError("disk full (injected)")
        super().save(state)


class Ticker:
    def __init__(self, now=0):
        self.now = now

    def __call__(self):
        return self.now


class TestBootstrap:
    def test_first_run_registers_once_and_persists(self, env, tmp_path):
        recorder = RecordingTransport(env.transport)
        path = str(tmp_path / "state.json")
        client = WatnClient(recorder, state_path=path)
        cred = client.bootstrap()
        assert len(recorder.records) == 1
        assert recorder.records[0].path == "/register"
        saved = json.loads(open(path).read())
        assert saved["own"]["id"] == cred.id
        assert set(saved) == {"own", "legend", "cache", "fetched_ts"}

    def test_second_run_is_offline_and_identical(self, env, tmp_path):
        path = str(tmp_path / "state.json")
        first = WatnClient(env.transport, state_path=path).bootstrap()
        recorder = RecordingTransport(FailingTransport())
        again = WatnClient(recorder, state_path=path).bootstrap()
        assert again == first
        assert recorder.records == []

    def test_state_file_deleted_means_new_id(self, env, tmp_path):
        path = str(tmp_path / "state.json")
        first = WatnClient(env.transport, state_path=path).bootstrap()
        StateFile(path).erase()
        second = WatnClient(env.transport, state_path=path).bootstrap()
        assert second.id != first.id

    def test_first_run_server_down(self, tmp_path):
        client = WatnClient(FailingTransport(), state_path=str(tmp_path / "s.json"))
        with pytest.raises(ServerUnreachableError):
            client.bootstrap()

    def test_ops_before_bootstrap_rejected(self, env):
        client = env.client()
        with pytest.raises(NotBootstrappedError):
            client.checkin_here(0.0, 0.0)


class TestAcceptInvite:
    def test_two_phase_success(self, env):
        a, b = env.client(), env.client()
        a.bootstrap()
        b.bootstrap()
        link = a.share()
        sharer = b.accept_invite(link, "alice")
        assert sharer == a.whoami().id
        assert b.list_legend() == {sharer: "alice"}
        assert b.sharers() == [sharer]

    def test_bare_token_also_accepted(self, env):
        a, b = env.client(), env.client()
        a.bootstrap()
        b.bootstrap()
        token = extract_token(a.share())
        assert b.accept_invite(token, "al") == a.whoami().id

    def test_expired_token_leaves_legend_unchanged(self, env):
        a, b = env.client(), env.client()
        a.bootstrap()
        b.bootstrap()
        stale = encode_invite(a.whoami().id, new_nonce(), 1, TEST_KEY)
        with pytest.raises(InviteRejectedError) as exc:
            b.accept_invite(stale, "alice")
        assert exc.value.remote_code == "expired_token"
        assert b.list_legend() == {}
        assert b.sharers() == []

    def test_partial_commit_then_repair(self, env, tmp_path):
        a = env.client()
        a.bootstrap()
        flaky = FlakyStateFile(str(tmp_path / "b.json"), fail_on_call=2)  # 1=bootstrap, 2=accept
        b = WatnClient(env.transport, state_file=flaky)
        b.bootstrap()
        link = a.share()
        with pytest.raises(PartialCommitError) as exc:
            b.accept_invite(link, "alice")
        sharer = exc.value.sharer
        # server half committed, local half did not
        assert b.sharers() == [sharer]
        assert b.list_legend() == {}
        # the stranded state renders via raw-ID fallback
        a.checkin_here(1.0, 2.0)
        view = b.refresh()
        assert [e.display for e in view.entries] == [sharer]
        # documented repair: retry the local write
        b.set_name(sharer, "alice")
        assert [e.display for e in b.refresh().entries] == ["alice"]
        # a restarted client sees the repaired state
        b2 = WatnClient(env.transport, state_file=StateFile(flaky.path))
        assert b2.list_legend() == {sharer: "alice"}

    def test_partial_commit_on_reaccept_keeps_old_name(self, env, tmp_path):
        a = env.client()
        a.bootstrap()
        flaky = FlakyStateFile(str(tmp_path / "b.json"), fail_on_call=0)
        b = WatnClient(env.transport, state_file=flaky)
        b.bootstrap()
        sharer = b.accept_invite(a.share(), "alice")
        flaky.fail_on_call = flaky.calls + 1
        with pytest.raises(PartialCommitError):
            b.accept_invite(a.share(), "alice-v2")
        # memory still mirrors what disk holds: the old binding
        assert b.list_legend() == {sharer: "alice"}
        assert StateFile(flaky.path).load().legend == {sharer: "alice"}

    def test_phase_one_failure_writes_nothing(self, env, tmp_path):
        a = env.client()
        a.bootstrap()
        switch = SwitchableTransport(env.transport)
        b = WatnClient(switch, state_path=str(tmp_path / "b.json"))
        b.bootstrap()
        link = a.share()
        switch.inner = FailingTransport()
        with pytest.raises(ServerUnreachableError):
            b.accept_invite(link, "alice")
        switch.inner = env.transport
        assert b.list_legend() == {}
        assert b.sharers() == []
        # the token was never redeemed, so the same link retries cleanly
        assert b.accept_invite(link, "alice") == a.whoami().id


class TestRefreshAndCache:
    def test_substitution_and_fallback(self, env):
        a, b, c = env.client(), env.client(), env.client()
        for client in (a, b, c):
            client.bootstrap()
        b.accept_invite(a.share(), "bob-view-of-a")
        b.accept_invite(c.share(), "carol")
        b.remove_name(c.whoami().id)  # force fallback for c
        a.checkin_here(1.0, 1.0)
        c.checkin_here(2.0, 2.0)
        view = b.refresh()
        displays = {e.id: e.display for e in view.entries}
        assert displays[a.whoami().id] == "bob-view-of-a"
        assert displays[c.whoami().id] == c.whoami().id

    def test_refresh_falls_back_to_cache_when_unreachable(self, env):
        a = env.client()
        a.bootstrap()
        switch = SwitchableTransport(env.transport)
        ticker = Ticker(1000)
        b = WatnClient(switch, state_path=env.state_path(), clock=ticker)
        b.bootstrap()
        b.accept_invite(a.share(), "alice")
        a.checkin_here(3.0, 4.0)
        fresh = b.refresh()
        assert fresh.from_cache is False and fresh.staleness_ms == 0
        switch.inner = FailingTransport()
        ticker.now = 6000
        stale = b.refresh()
        assert stale.from_cache is True
        assert stale.staleness_ms == 5000
        assert [(e.display, e.point.lat) for e in stale.entries] == [("alice", 3.0)]

    def test_rename_applies_to_cache_offline(self, env):
        a = env.client()
        a.bootstrap()
        switch = SwitchableTransport(env.transport)
        b = WatnClient(switch, state_path=env.state_path())
        b.bootstrap()
        b.accept_invite(a.share(), "old-name")
        a.checkin_here(1.0, 1.0)
        b.refresh()
        switch.inner = FailingTransport()
        b.set_name(a.whoami().id, "new-name")
        assert [e.display for e in b.cached().entries] == ["new-name"]

    def test_cache_survives_restart(self, env):
        a = env.client()
        a.bootstrap()
        path = env.state_path()
        b = WatnClient(env.transport, state_path=path)
        b.bootstrap()
        b.accept_invite(a.share(), "alice")
        a.checkin_here(9.0, 9.0)
        before = b.refresh()
        reloaded = WatnClient(FailingTransport(), state_path=path)
        after = reloaded.cached()
        assert [(e.id, e.display, e.point, e.ts, e.msg) for e in after.entries] == [
            (e.id, e.display, e.point, e.ts, e.msg) for e in before.entries
        ]

    def test_no_cache_exposed(self, env):
        client = env.client()
        client.bootstrap()
        fresh = WatnClient(FailingTransport(), state_path=env.state_path())
        with pytest.raises(NoCacheError):
            fresh.cached()


class TestLegendLocality:
    def test_set_name_issues_zero_requests(self, env):
        recorder = RecordingTransport(env.transport)
        client = WatnClient(recorder, state_path=env.state_path())
        client.bootstrap()
        baseline = len(recorder.records)
        client.set_name("A" * 22, "friend")
        client.list_legend()
        client.remove_name("A" * 22)
        assert len(recorder.records) == baseline

    def test_bad_id_rejected(self, env):
        client = env.client()
        with pytest.raises(BadIdError):
            client.set_name("not-an-id", "x")

    def test_name_length_cap(self, env):
        client = env.client()
        client.set_name("A" * 22, "x" * 100)
        with pytest.raises(NameTooLongError):
            client.set_name("A" * 22, "x" * 101)
        with pytest.raises(NameTooLongError):
            client.set_name("A" * 22, "")

    def test_names_never_cross_the_wire(self, env):
        sentinel = "XXSENTINELNAMEXX"
        recorder = RecordingTransport(env.transport)
        a = WatnClient(recorder, state_path=env.state_path())
        b = WatnClient(recorder, state_path=env.state_path())
        a.bootstrap()
        b.bootstrap()
        b.accept_invite(a.share(display_hint=sentinel), sentinel)
        a.checkin_here(1.0, 1.0, "plain message")
        b.refresh()
        b.set_name(a.whoami().id, sentinel + "2")
        b.history(a.whoami().id)
        b.readers()
        b.sharers()
        b.revoke_peer(a.whoami().id, "incoming")
        b.wipe()
        assert recorder.records, "workflow should have produced traffic"
        for record in recorder.records:
            assert sentinel not in record.flat()
        assert sentinel.encode() not in env.store.serialize()


class TestDivergentLegends:
    def test_same_feed_different_names_identical_server_bytes(self, env):
        a, b, c = env.client(), env.client(), env.client()
        for client in (a, b, c):
            client.bootstrap()
        b.accept_invite(a.share(), "bob")
        c.accept_invite(a.share(), "robert")
        a.checkin_here(5.0, 6.0)
        before = env.store.serialize()
        view_b = b.refresh()
        view_c = c.refresh()
        assert [e.display for e in view_b.entries] == ["bob"]
        assert [e.display for e in view_c.entries] == ["robert"]
        b.set_name(a.whoami().id, "bob2")
        c.set_name(a.whoami().id, "robert2")
        assert [e.display for e in b.cached().entries] == ["bob2"]
        assert [e.display for e in c.cached().entries] == ["robert2"]
        assert env.store.serialize() == before


class TestThinWrappers:
    def test_share_link_decodes_to_own_id(self, env):
        client = env.client()
        cred = client.bootstrap()
        from watn.model import decode_invite

        token = extract_token(client.share())
        assert decode_invite(token, TEST_KEY, 0).sharer == cred.id

    def test_wipe_then_bootstrap_new_id(self, env, tmp_path):
        path = str(tmp_path / "w.json")
        client = WatnClient(env.transport, state_path=path)
        old = client.bootstrap()
        client.set_name("A" * 22, "x")
        client.wipe()
        assert client.list_legend() == {}
        fresh = WatnClient(env.transport, state_path=path).bootstrap()
        assert fresh.id != old.id
        assert old.id in env.store.retired_ids()

    def test_revoke_incoming_removes_sharer(self, env):
        a, b = env.client(), env.client()
        a.bootstrap()
        b.bootstrap()
        b.accept_invite(a.share(), "alice")
        a.checkin_here(1.0, 1.0)
        b.revoke_peer(a.whoami().id, "incoming")
        assert b.refresh().entries == []

    def test_revoke_outgoing_removes_reader(self, env):
        a, b = env.client(), env.client()
        a.bootstrap()
        b.bootstrap()
        b.accept_invite(a.share(), "alice")
        a.revoke_peer(b.whoami().id, "outgoing")
        assert a.readers() == []

    def test_revoke_direction_validated(self, env):
        client = env.client()
        client.bootstrap()
        with pytest.raises(ValueError):
            client.revoke_peer("A" * 22, "sideways")

    def test_history_wrapper(self, env):
        client = env.client()
        client.bootstrap()
        for i in range(4):
            client.checkin_here(float(i), 0.0)
        rows = client.history(client.whoami().id, 2)
        assert [r["lat"] for r in rows] == [2.0, 3.0]


class TestStateFileEdges:
    def test_corrupt_state_fails_loudly(self, env, tmp_path):
        path = tmp_path / "mangled.json"
        path.write_text("{broken")
        from watn.client import CorruptStateError

        with pytest.raises(CorruptStateError):
            WatnClient(env.transport, state_path=str(path))

    def test_missing_file_means_fresh_state(self, env, tmp_path):
        client = WatnClient(env.transport, state_path=str(tmp_path / "absent.json"))
        assert client.whoami() is None
        assert client.list_legend() == {}


class TestResolvePure:
    def test_pure_and_order_preserving(self):
        rows = [
            {"id": "B" * 22, "lat": 1.0, "lng": 2.0, "ts": 10},
            {"id": "A" * 22, "lat": 3.0, "lng": 4.0, "ts": 20, "msg": "hi"},
        ]
        legend = {"A" * 22: "alice"}
        one = resolve(rows, legend)
        two = resolve(rows, legend)
        assert one == two
        assert [e.id for e in one] == ["B" * 22, "A" * 22]
        assert [e.display for e in one] == ["B" * 22, "alice"]
        assert one[1].msg == "hi"
