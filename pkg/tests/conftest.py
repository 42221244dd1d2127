from __future__ import annotations

import uuid

import pytest

from proxyflow.connectors import FilesystemConnector, KVServer, MemoryConnector, RemoteKVConnector
from proxyflow.engine import Client, LocalCluster
from proxyflow.store import Store


@pytest.fixture
def memory_connector():
    c = MemoryConnector(f"test-{uuid.uuid4().hex[:8]}")
    yield c
    c.close()


@pytest.fixture
def fs_connector(tmp_path):
    c = FilesystemConnector(tmp_path / "store")
    yield c
    c.close()


@pytest.fixture
def kv_server():
    with KVServer() as server:
        yield server


@pytest.fixture
def kv_connector(kv_server):
    c = RemoteKVConnector(*kv_server.address)
    yield c
    c.close()


@pytest.fixture(params=["memory", "filesystem", "remote_kv"])
def any_connector(request):
    return request.getfixturevalue(
        {"memory": "memory_connector", "filesystem": "fs_connector",
         "remote_kv": "kv_connector"}[request.param])


@pytest.fixture
def store(memory_connector):
    return Store("tests", memory_connector)


@pytest.fixture
def fs_store(fs_connector):
    return Store("tests", fs_connector)


@pytest.fixture
def make_cluster():
    """Thread-mode clusters that are torn down after the test."""
    made = []

    def make(n_workers=2, slots=1):
        cluster = LocalCluster(n_workers, slots=slots).start()
        client = Client(cluster.address, timeout=60)
        cluster.wait_for_workers(client)
        made.append((cluster, client))
        return cluster, client

    yield make
    for cluster, client in made:
        client.close()
        cluster.close()


@pytest.fixture
def engine(make_cluster):
    return make_cluster()


# -- acceptance report -----------------------------------------------------

_criteria: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(name, ok, detail)`` records one PASS/FAIL line; the lines
    are echoed immediately and repeated in the terminal summary."""

    def report(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        _criteria.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
