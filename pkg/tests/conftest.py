import hashlib
import random
import threading

import pytest

from watn.client import WatnClient
from watn.server import WatnApi, serve
from watn.store import CounterClock, WatnStore
from watn.transport import LocalTransport

TEST_EPOCH = 1_700_000_000_000
TEST_KEY = hashlib.sha256(b"watn-test-key").digest()


class Env:
    """One in-process server plus a factory for clients with isolated state files."""

    def __init__(self, tmp_path, seed=7, history_cap=1000):
        self.clock = CounterClock(TEST_EPOCH)
        self.store = WatnStore(history_cap=history_cap, clock=self.clock, rng=random.Random(seed))
        self.api = WatnApi(self.store, TEST_KEY, clock=self.clock, rng=random.Random(seed + 1))
        self.transport = LocalTransport(self.api)
        self.tmp = tmp_path
        self._n = 0

    def state_path(self, label=None):
        self._n += 1
        return str(self.tmp / f"{label or 'client'}-{self._n}.json")

    def client(self, transport=None, **kwargs) -> WatnClient:
        return WatnClient(transport or self.transport, state_path=self.state_path(), **kwargs)


@pytest.fixture
def env(tmp_path):
    return Env(tmp_path)


@pytest.fixture
def http_server(tmp_path):
    """A real socket-listening server for tests that need actual HTTP."""
    env = Env(tmp_path)
    httpd = serve(env.api, "127.0.0.1", 0)
    thread = threading.Thread(target=lambda: httpd.serve_forever(poll_interval=0.02), daemon=True)
    thread.start()
    env.base_url = "http://127.0.0.1:%d" % httpd.server_address[1]
    try:
        yield env
    finally:
        httpd.shutdown()
        httpd.server_close()
