import json
import threading
from concurrent.futures import ThreadPoolExecutor

import pytest

from watn.model import canonical_json, decode_invite
from watn.reference import ReferenceModel
from watn.server import ApiConfig, WatnApi, load_or_create_key, serve
from watn.store import WatnStore
from watn.transport import HttpTransport, TransportError

from conftest import TEST_KEY


def call(env, method, path, query=None, body=None):
    payload = canonical_json(body).encode() if body is not None else b""
    status, raw = env.api.handle(method, path, query or {}, payload)
    return status, json.loads(raw)


def register(env):
    status, data = call(env, "POST", "/register")
    assert status == 200
    return data


class TestRegister:
    def test_returns_exactly_id_and_secret(self, env):
        status, data = call(env, "POST", "/register")
        assert status == 200
        assert set(data) == {"id", "secret"}

    def test_two_calls_distinct(self, env):
        assert register(env)["id"] != register(env)["id"]

    def test_malformed_body_ignored(self, env):
        status, raw = env.api.handle("POST", "/register", {}, b"this is not json {{{")
        assert status == 200


class TestCheckin:
    def test_valid(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": 55.0, "lng": 37.0})
        assert status == 200 and "ts" in data

    def test_out_of_range(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": 91.0, "lng": 0.0})
        assert (status, data) == (400, {"error": "out_of_range"})

    def test_wrong_secret(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={"id": cred["id"], "secret": "x", "lat": 0.0, "lng": 0.0})
        assert (status, data) == (401, {"error": "auth_failed"})

    def test_msg_too_long(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": 0.0, "lng": 0.0, "msg": "x" * 501})
        assert (status, data) == (400, {"error": "msg_too_long"})

    def test_unknown_key_rejected(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": 0.0, "lng": 0.0, "name": "bob"})
        assert (status, data) == (400, {"error": "unknown_key"})

    def test_missing_key(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": 0.0})
        assert (status, data) == (400, {"error": "missing_key"})

    def test_bad_value_type(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/checkin", body={**cred, "lat": "55", "lng": 0.0})
        assert (status, data) == (400, {"error": "bad_value"})


def make_edge(env, sharer, reader):
    _, invite = call(env, "POST", "/invite", body=sharer)
    status, data = call(env, "POST", "/accept", body={**reader, "token": invite["token"]})
    assert status == 200, data
    return invite["token"]


class TestFeed:
    def test_no_sharers_is_empty_array(self, env):
        cred = register(env)
        status, raw = env.api.handle("GET", "/feed", cred, b"")
        assert (status, raw) == (200, b"[]")

    def test_single_sharer_shape(self, env):
        a, b = register(env), register(env)
        make_edge(env, a, b)
        _, checkin = call(env, "POST", "/checkin", body={**a, "lat": 55.0, "lng": 37.0})
        status, raw = env.api.handle("GET", "/feed", b, b"")
        assert status == 200
        expected = '[{"id":"%s","lat":55.0,"lng":37.0,"ts":%d}]' % (a["id"], checkin["ts"])
        assert raw.decode() == expected

    def test_three_sharers_sorted_and_match_reference(self, env):
        reader = register(env)
        model = ReferenceModel()
        model.register(reader["id"])
        for _ in range(3):
            sharer = register(env)
            model.register(sharer["id"])
            make_edge(env, sharer, reader)
            model.add_edge(sharer["id"], reader["id"])
            _, data = call(env, "POST", "/checkin", body={**sharer, "lat": 1.0, "lng": 2.0})
            model.checkin(sharer["id"], 1.0, 2.0, data["ts"], None)
        status, rows = call(env, "GET", "/feed", query=reader)
        assert status == 200
        assert [r["id"] for r in rows] == sorted(r["id"] for r in rows)
        want = [{k: v for k, v in row.items() if v is not None} for row in model.feed(reader["id"])]
        got = [{k: row[k] for k in ("id", "lat", "lng", "ts")} for row in rows]
        assert got == [{k: row[k] for k in ("id", "lat", "lng", "ts")} for row in want]

    def test_unknown_query_param_rejected(self, env):
        cred = register(env)
        status, data = call(env, "GET", "/feed", query={**cred, "name": "bob"})
        assert (status, data) == (400, {"error": "unknown_key"})


class TestInvite:
    def test_token_decodes_to_caller(self, env):
        cred = register(env)
        status, data = call(env, "POST", "/invite", body=cred)
        assert status == 200
        assert data["link"] == "watn://accept?token=" + data["token"]
        decoded = decode_invite(data["token"], TEST_KEY, 0)
        assert decoded.sharer == cred["id"]

    def test_two_invites_distinct_nonces(self, env):
        cred = register(env)
        _, one = call(env, "POST", "/invite", body=cred)
        _, two = call(env, "POST", "/invite", body=cred)
        assert decode_invite(one["token"], TEST_KEY, 0).nonce != decode_invite(two["token"], TEST_KEY, 0).nonce

    def test_deleted_cred_unauthorized(self, env):
        cred = register(env)
        call(env, "POST", "/delete", body=cred)
        status, data = call(env, "POST", "/invite", body=cred)
        assert (status, data) == (401, {"error": "auth_failed"})


class TestAccept:
    def test_creates_edge_and_reveals_sharer(self, env):
        a, b = register(env), register(env)
        _, invite = call(env, "POST", "/invite", body=a)
        status, data = call(env, "POST", "/accept", body={**b, "token": invite["token"]})
        assert (status, data) == (200, {"sharer": a["id"]})
        _, sharers = call(env, "GET", "/sharers", query=b)
        assert sharers == [a["id"]]

    def test_second_use_rejected(self, env):
        a, b, c = register(env), register(env), register(env)
        token = make_edge(env, a, b)
        status, data = call(env, "POST", "/accept", body={**c, "token": token})
        assert (status, data) == (400, {"error": "used_token"})

    def test_sharer_deleted_before_accept(self, env):
        a, b = register(env), register(env)
        _, invite = call(env, "POST", "/invite", body=a)
        call(env, "POST", "/delete", body=a)
        status, data = call(env, "POST", "/accept", body={**b, "token": invite["token"]})
        assert (status, data) == (404, {"error": "unknown_participant"})

    def test_self_accept_conflict(self, env):
        a = register(env)
        _, invite = call(env, "POST", "/invite", body=a)
        status, data = call(env, "POST", "/accept", body={**a, "token": invite["token"]})
        assert (status, data) == (409, {"error": "self_accept"})

    def test_expired_token(self, env):
        from watn.model import encode_invite, new_nonce

        a, b = register(env), register(env)
        stale = encode_invite(a["id"], new_nonce(), 1, TEST_KEY)  # expired long ago
        status, data = call(env, "POST", "/accept", body={**b, "token": stale})
        assert (status, data) == (400, {"error": "expired_token"})

    def test_garbage_token(self, env):
        b = register(env)
        status, data = call(env, "POST", "/accept", body={**b, "token": "garbage"})
        assert (status, data) == (400, {"error": "bad_token"})

    def test_bad_caller_cred(self, env):
        a = register(env)
        _, invite = call(env, "POST", "/invite", body=a)
        status, data = call(env, "POST", "/accept", body={"id": a["id"], "secret": "bad", "token": invite["token"]})
        assert (status, data) == (401, {"error": "auth_failed"})

    def test_concurrent_duplicate_redemption(self, env):
        a = register(env)
        receivers = [register(env) for _ in range(6)]
        _, invite = call(env, "POST", "/invite", body=a)
        barrier = threading.Barrier(len(receivers))

        def attempt(cred):
            barrier.wait()
            status, _ = call(env, "POST", "/accept", body={**cred, "token": invite["token"]})
            return status

        with ThreadPoolExecutor(len(receivers)) as pool:
            statuses = list(pool.map(attempt, receivers))
        assert sorted(statuses) == [200] + [400] * (len(receivers) - 1)


class TestGraphEndpoints:
    def test_readers_after_accept(self, env):
        a, b = register(env), register(env)
        make_edge(env, a, b)
        status, readers = call(env, "GET", "/readers", query=a)
        assert (status, readers) == (200, [b["id"]])

    def test_revoke_not_party(self, env):
        a, b, c = register(env), register(env), register(env)
        make_edge(env, a, b)
        status, data = call(env, "POST", "/revoke", body={**c, "sharer": a["id"], "reader": b["id"]})
        assert (status, data) == (403, {"error": "not_party"})

    def test_revoke_removes_from_feed(self, env):
        a, b = register(env), register(env)
        make_edge(env, a, b)
        call(env, "POST", "/checkin", body={**a, "lat": 1.0, "lng": 1.0})
        status, data = call(env, "POST", "/revoke", body={**b, "sharer": a["id"], "reader": b["id"]})
        assert (status, data) == (200, {})
        _, rows = call(env, "GET", "/feed", query=b)
        assert rows == []

    def test_history_forbidden_without_edge(self, env):
        a, b = register(env), register(env)
        call(env, "POST", "/checkin", body={**a, "lat": 1.0, "lng": 1.0})
        status, data = call(env, "GET", "/history", query={**b, "target": a["id"]})
        assert (status, data) == (403, {"error": "not_shared"})

    def test_history_limit(self, env):
        a = register(env)
        for i in range(5):
            call(env, "POST", "/checkin", body={**a, "lat": float(i), "lng": 0.0})
        status, rows = call(env, "GET", "/history", query={**a, "target": a["id"], "limit": "2"})
        assert status == 200
        assert [r["lat"] for r in rows] == [3.0, 4.0]

    def test_delete_then_feed_unauthorized(self, env):
        a = register(env)
        call(env, "POST", "/delete", body=a)
        status, data = call(env, "GET", "/feed", query=a)
        assert (status, data) == (401, {"error": "auth_failed"})


class TestRouting:
    def test_not_found(self, env):
        status, data = call(env, "GET", "/nope")
        assert (status, data) == (404, {"error": "not_found"})

    def test_method_not_allowed(self, env):
        status, data = call(env, "GET", "/checkin")
        assert (status, data) == (405, {"error": "method_not_allowed"})

    def test_error_bodies_are_json_with_stable_code(self, env):
        status, raw = env.api.handle("POST", "/checkin", {}, b"[1,2,3]")
        assert status == 400
        assert json.loads(raw) == {"error": "bad_json"}

    def test_unexpected_failure_still_answers_json(self, env, monkeypatch):
        def boom(cred):
            raise RuntimeError("wires crossed")

        monkeypatch.setattr(env.api.store, "feed", boom)
        cred = register(env)
        status, data = call(env, "GET", "/feed", query=cred)
        assert (status, data) == (500, {"error": "internal"})


class TestRealHttp:
    def test_round_trip_over_sockets(self, http_server):
        transport = HttpTransport(http_server.base_url)
        status, raw = transport.request("POST", "/register", None, b"")
        assert status == 200
        cred = json.loads(raw)
        body = canonical_json({**cred, "lat": 55.0, "lng": 37.0}).encode()
        status, raw = transport.request("POST", "/checkin", None, body)
        assert status == 200
        status, raw = transport.request("GET", "/feed", cred, None)
        assert (status, raw) == (200, b"[]")

    def test_http_error_statuses_pass_through(self, http_server):
        transport = HttpTransport(http_server.base_url)
        status, raw = transport.request("GET", "/feed", {"id": "x", "secret": "y"}, None)
        assert status == 401
        assert json.loads(raw) == {"error": "auth_failed"}

    def test_unreachable_server(self):
        transport = HttpTransport("http://127.0.0.1:9", timeout=0.5)
        with pytest.raises(TransportError):
            transport.request("POST", "/register", None, b"")


class TestConfig:
    def test_from_env_defaults(self):
        cfg = ApiConfig.from_env(env={})
        assert cfg.bind == "127.0.0.1:8470"
        assert cfg.invite_ttl_ms == 604_800_000
        assert cfg.history_cap == 1000
        assert cfg.test_clock_start is None

    def test_from_env_overrides(self):
        cfg = ApiConfig.from_env(
            env={
                "WATN_BIND": "0.0.0.0:9999",
                "WATN_KEY": "ab" * 32,
                "WATN_TTL_MS": "1000",
                "WATN_HISTORY_CAP": "5",
                "WATN_SNAPSHOT_PATH": "/tmp/s.watn",
                "WATN_SNAPSHOT_INTERVAL_S": "2.5",
                "WATN_TEST_CLOCK": "1700000000000",
            }
        )
        assert cfg.key == bytes.fromhex("ab" * 32)
        assert cfg.invite_ttl_ms == 1000
        assert cfg.history_cap == 5
        assert cfg.snapshot_interval_s == 2.5
        assert cfg.test_clock_start == 1_700_000_000_000

    def test_bad_key_rejected(self):
        with pytest.raises(ValueError):
            ApiConfig.from_env(env={"WATN_KEY": "zz"})

    def test_key_file_round_trip(self, tmp_path):
        path = str(tmp_path / "signing.key")
        key = load_or_create_key(path)
        assert len(key) == 32
        assert load_or_create_key(path) == key

    def test_from_config_restores_snapshot(self, tmp_path):
        snap = str(tmp_path / "state.watn")
        store = WatnStore()
        cred = store.register()
        store.snapshot(snap)
        cfg = ApiConfig(key=b"x" * 32, snapshot_path=snap)
        api = WatnApi.from_config(cfg)
        assert api.store.participant_ids() == [cred.id]

    def test_from_config_test_clock(self, tmp_path):
        cfg = ApiConfig(key=b"x" * 32, test_clock_start=500)
        api = WatnApi.from_config(cfg)
        cred = api.store.register()
        assert api.store.checkin(cred, 0.0, 0.0).ts == 500
        assert api.store.checkin(cred, 0.0, 0.0).ts == 1500
