from __future__ import annotations

import hashlib
import os
import threading

import pytest

from proxyflow.connectors import (
    ConnectorConfig, FilesystemConnector, KVServer, MemoryConnector, MultiConnector,
    RemoteKVConnector, RoutingPolicy, connector_from_url,
)
from proxyflow.connectors import kv
from proxyflow.errors import (
    ConfigError, ConnectorUnavailable, KeyNotFound, ProtocolError, StorageFull,
)
from proxyflow.keys import StoreKey


def key(ns="t"):
    return StoreKey.new(ns)


# -- shared contract ---------------------------------------------------------

def test_empty_payload(any_connector):
    k = key()
    any_connector.put(k, b"")
    assert any_connector.get(k) == b""
    assert any_connector.exists(k)


def test_megabyte_payload(any_connector):
    blob = os.urandom(1 << 20)
    k = key()
    any_connector.put(k, blob)
    assert hashlib.sha256(any_connector.get(k)).digest() == hashlib.sha256(blob).digest()


def test_missing_and_evicted(any_connector):
    k = key()
    assert not any_connector.exists(k)
    with pytest.raises(KeyNotFound):
        any_connector.get(k)
    any_connector.put(k, b"abc")
    any_connector.evict(k)
    any_connector.evict(k)  # idempotent
    assert not any_connector.exists(k)
    with pytest.raises(KeyNotFound):
        any_connector.get(k)


def test_overwrite(any_connector):
    k = key()
    any_connector.put(k, b"one")
    any_connector.put(k, b"two")
    assert any_connector.get(k) == b"two"


def test_closed_connector_unavailable(any_connector):
    k = key()
    any_connector.close()
    for op in (lambda: any_connector.put(k, b"x"), lambda: any_connector.get(k),
               lambda: any_connector.exists(k), lambda: any_connector.evict(k)):
        with pytest.raises(ConnectorUnavailable):
            op()


def test_census_by_namespace(any_connector):
    a = [key("alpha") for _ in range(3)]
    b = key("beta")
    for k in a + [b]:
        any_connector.put(k, b"x")
    assert any_connector.keys("alpha") == sorted(a)
    assert any_connector.keys("beta") == [b]
    any_connector.evict(b)
    assert any_connector.keys("beta") == []


def test_concurrent_puts_and_gets(any_connector):
    keys = [key() for _ in range(64)]
    errors = []

    def work(k, i):
        try:
            data = bytes([i]) * 1000
            any_connector.put(k, data)
            assert any_connector.get(k) == data
        except Exception as exc:  # pragma: no cover - reported below
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(k, i)) for i, k in enumerate(keys)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(any_connector.keys("t")) == 64


def test_url_round_trip(any_connector):
    k = key()
    any_connector.put(k, b"via url")
    assert connector_from_url(any_connector.url).get(k) == b"via url"


# -- persistence -----------------------------------------------------------

def test_memory_not_persistent():
    c = MemoryConnector("persist-check")
    keys = [key() for _ in range(1000)]
    for k in keys:
        c.put(k, b"v")
    c.close()
    c2 = MemoryConnector("persist-check")
    assert not any(c2.exists(k) for k in keys)
    c2.close()


def test_filesystem_persistent(tmp_path):
    c = FilesystemConnector(tmp_path)
    keys = [key() for _ in range(1000)]
    for k in keys:
        c.put(k, b"v")
    c.close()
    on_disk = {p.name for p in (tmp_path / "t").iterdir()}
    assert on_disk == {k.id for k in keys}
    c2 = FilesystemConnector(tmp_path)
    assert all(c2.exists(k) for k in keys)
    c2.close()


def test_filesystem_layout_and_no_temp_files(tmp_path):
    c = FilesystemConnector(tmp_path)
    k = key("layout")
    c.put(k, b"data")
    assert (tmp_path / "layout" / k.id).read_bytes() == b"data"
    assert [p.name for p in (tmp_path / "layout").iterdir()] == [k.id]


# -- capacity --------------------------------------------------------------

def test_memory_storage_full():
    c = MemoryConnector("tiny", capacity_bytes=10)
    c.put(key(), b"12345")
    with pytest.raises(StorageFull):
        c.put(key(), b"123456")
    c.close()


def test_kv_storage_full():
    with KVServer(capacity_bytes=10) as server:
        c = RemoteKVConnector(*server.address)
        c.put(key(), b"1234567890")
        with pytest.raises(StorageFull):
            c.put(key(), b"1")
        c.close()


# -- remote kv -------------------------------------------------------------

def test_kv_two_clients(kv_server):
    a = RemoteKVConnector(*kv_server.address)
    k = key()
    a.put(k, b"shared")
    a.close()
    b = RemoteKVConnector(*kv_server.address)
    assert b.get(k) == b"shared"
    b.close()


def test_kv_recovers_after_dropped_socket(kv_connector):
    k = key()
    kv_connector.put(k, b"x")
    sock = kv_connector._pool.get_nowait()
    sock.close()
    kv_connector._release(sock)
    with pytest.raises(ConnectorUnavailable):
        kv_connector.get(k)  # the broken socket is discarded
    assert kv_connector.get(k) == b"x"


def test_kv_unreachable():
    with KVServer() as server:
        host, port = server.address
    with pytest.raises(ConnectorUnavailable):
        RemoteKVConnector(host, port, timeout=1)


def test_kv_wire_format():
    parts = kv.encode_request(kv.PUT, "ns/id", b"val")
    raw = b"".join(parts)
    assert raw == b"\x01" + (5).to_bytes(4, "big") + b"ns/id" + (3).to_bytes(4, "big") + b"val"
    assert kv.decode_request(raw)[:2] == (kv.PUT, "ns/id")
    resp = b"".join(kv.encode_response(kv.OK, b"v"))
    status, value = kv.decode_response(resp)
    assert status == kv.OK and bytes(value) == b"v"
    with pytest.raises(ProtocolError):
        kv.decode_request(b"\x01\x00\x00\x00\x09ab")


# -- routing ---------------------------------------------------------------

def test_routing_examples():
    policy = RoutingPolicy(((10_000, "memory"),), "filesystem")
    assert policy.route(1_000) == "memory"
    assert policy.route(1_000_000) == "filesystem"
    assert [policy.route(n) for n in (9_999, 10_000, 10_001)] == ["memory", "memory", "filesystem"]


def test_routing_first_rule_wins_and_validation():
    policy = RoutingPolicy(((10, "a"), (100, "b")), "c")
    assert [policy.route(n) for n in (0, 10, 11, 100, 101)] == ["a", "a", "b", "b", "c"]
    with pytest.raises(ConfigError):
        RoutingPolicy(((100, "a"), (10, "b")), "c")
    with pytest.raises(ConfigError):
        RoutingPolicy(((10, "a"), (10, "b")), "c")
    with pytest.raises(ConfigError):
        RoutingPolicy((), "")


def test_multi_connector_places_by_size(tmp_path):
    mem = MemoryConnector("multi-mem")
    fs = FilesystemConnector(tmp_path)
    m = MultiConnector(RoutingPolicy(((100, "mem"),), "fs"), {"mem": mem, "fs": fs})
    small, big = key(), key()
    m.put(small, b"s" * 100)
    m.put(big, b"b" * 101)
    assert mem.exists(small) and not fs.exists(small)
    assert fs.exists(big) and not mem.exists(big)
    assert m.get(small) == b"s" * 100 and m.get(big) == b"b" * 101
    assert m.url_for(small) == mem.url and m.url_for(big) == fs.url
    # moving a key between tiers leaves no stale copy behind
    m.put(small, b"x" * 500)
    assert not mem.exists(small) and fs.exists(small)
    assert m.keys("t") == sorted([small, big])
    m.evict(big)
    assert not fs.exists(big)
    m.close()


def test_multi_url_round_trip(tmp_path):
    m = MultiConnector(RoutingPolicy(((100, "mem"),), "fs"),
                       {"mem": MemoryConnector("multi-url"), "fs": FilesystemConnector(tmp_path)})
    cfg = ConnectorConfig.from_url(m.url)
    assert cfg.kind == "multi" and cfg.policy() == m.policy
    m.close()


# -- configuration ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ConnectorConfig("tape")
    with pytest.raises(ConfigError):
        ConnectorConfig("filesystem")
    with pytest.raises(ConfigError):
        ConnectorConfig("memory", {"colour": "red"})
    with pytest.raises(ConfigError):
        ConnectorConfig("remote_kv", {"address": "nohost"})
    with pytest.raises(ConfigError):
        ConnectorConfig("multi", {"default": "x"},
                        {"y": ConnectorConfig("memory")})


def test_config_file(tmp_path):
    path = tmp_path / "conn.toml"
    path.write_text(f"""
[connector]
kind = "multi"
default = "disk"
rules = [{{max_size = 10000, connector = "mem"}}]

[connector.connectors.mem]
kind = "memory"
segment = "cfg-test"

[connector.connectors.disk]
kind = "filesystem"
root = "{tmp_path / 'disk'}"
""")
    cfg = ConnectorConfig.parse(str(path))
    m = cfg.build()
    assert isinstance(m, MultiConnector)
    assert m.route(10_000) == "mem" and m.route(10_001) == "disk"
    m.close()


def test_config_urls_and_bad_input(tmp_path):
    assert ConnectorConfig.parse("memory://seg").params == {"segment": "seg"}
    assert ConnectorConfig.parse(f"file://{tmp_path}").kind == "filesystem"
    assert ConnectorConfig.parse("kv://127.0.0.1:7000").params == {"address": "127.0.0.1:7000"}
    with pytest.raises(ConfigError):
        ConnectorConfig.parse("ftp://x")
    with pytest.raises(ConfigError):
        ConnectorConfig.parse(str(tmp_path / "missing.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("[connector\n")
    with pytest.raises(ConfigError):
        ConnectorConfig.parse(str(bad))


def test_config_builds_kv(kv_server):
    host, port = kv_server.address
    c = ConnectorConfig("remote_kv", {"host": host, "port": str(port)}).build()
    k = key()
    c.put(k, b"ok")
    assert c.get(k) == b"ok"
    c.close()
