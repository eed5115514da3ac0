#!/usr/bin/env python3
"""
End-to-end sessions: registry, monitor endpoint and simulated drive on loopback.
"""

import os
import socket
import sys
import time
from datetime import datetime, timezone

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from drivemon.core.meta import ScenarioClass, SessionMeta
from drivemon.core.signal import SamplingRate, SensorKind
from drivemon.errors import DiscoveryFailure
from drivemon.harness.client import DriveParams, drive_client
from drivemon.harness.vehicle import read_vehicle_csv
from drivemon.protocol.monitor import MonitorEndpoint
from drivemon.protocol.registry import HostData, Registry, RegistryClient, RegistryServer
from drivemon.protocol.transfer import receive_files
from drivemon.storage.session_store import SessionStore, load_manifest, read_stream, verify_session
from drivemon.utils.config import Config

META = SessionMeta(participant_id="p01", scenario_class=ScenarioClass.INTERURBAN, kss=5)
FIXED = datetime(2024, 5, 1, 10, 0, 0, tzinfo=timezone.utc)


class Stack:
    """A registry and a monitor on loopback, each with its own data directory."""

    def __init__(self, root, **monitor_options):
        self.registry = RegistryServer(Registry(), host="127.0.0.1", port=0).start()
        self.monitor_store = SessionStore(root / "monitor")
        self.client_store = SessionStore(root / "client")
        self.monitor = MonitorEndpoint(
            "u01",
            store=self.monitor_store,
            registry=self.registry.address,
            host="127.0.0.1",
            port=0,
            **monitor_options,
        ).start()

    def drive(self, **options):
        params = DriveParams(user="u01", meta=META, timeout_s=10, **options)
        return drive_client(self.registry.address, params, self.client_store)

    def close(self):
        self.monitor.stop()
        self.registry.stop()


@pytest.fixture
def stack(tmp_path):
    running = Stack(tmp_path)
    yield running
    running.close()


def test_full_session_with_pause(stack):
    folder = stack.drive(duration_s=60, seed=3, pause_at_s=20.0, pause_len_s=10.0)
    manifest = load_manifest(folder)
    assert manifest.complete
    assert manifest.role == "simulator"
    assert manifest.allowed_address == "127.0.0.1"
    assert manifest.file_names() == ["ecg.csv", "emg.csv", "gsr.csv", "9dof.csv", "vehicle.csv", "offences.csv"]
    assert [(p.start_ms, p.end_ms) for p in manifest.pause_intervals] == [(20000, 30000)]

    _, ecg = read_stream(folder, SensorKind.ECG)
    assert len(ecg) == 6400
    _, gsr = read_stream(folder, SensorKind.GSR)
    assert len(gsr) == 510
    _, dof = read_stream(folder, SensorKind.DOF9)
    for samples in (ecg, gsr, dof):
        assert not any(20000 <= s.t < 30000 for s in samples)
        assert samples[-1].t < 60000
    assert len(read_vehicle_csv(folder / "vehicle.csv")) == 60
    assert verify_session(folder) == []

    monitored = stack.monitor.wait_for_session(timeout=10)
    assert monitored.session_id.startswith("m-")
    assert monitored.role == "monitor"
    assert monitored.complete
    assert monitored.allowed_address == "127.0.0.1"
    assert (folder / "ecg.csv").read_bytes() == (
        stack.monitor_store.data_dir / "u01" / monitored.session_id / "ecg.csv"
    ).read_bytes()


def test_monitor_serves_consecutive_sessions(stack):
    first = stack.drive(duration_s=5, session_id="s-first")
    second = stack.drive(duration_s=5, session_id="s-second")
    assert load_manifest(first).complete
    assert load_manifest(second).complete
    stack.monitor.wait_for_session(timeout=10)
    stack.monitor.wait_for_session(timeout=10)


def test_no_monitor_registered(tmp_path):
    registry = RegistryServer(Registry(), host="127.0.0.1", port=0).start()
    try:
        params = DriveParams(user="u01", meta=META, duration_s=5, timeout_s=5)
        with pytest.raises(DiscoveryFailure):
            drive_client(registry.address, params, SessionStore(tmp_path))
    finally:
        registry.stop()


def test_disallowed_simulator_gets_an_incomplete_session(tmp_path):
    pinned = Stack(tmp_path, allowed_address="10.9.9.9")
    try:
        folder = pinned.drive(duration_s=5)
        manifest = load_manifest(folder)
        assert not manifest.complete
        assert manifest.file_names() == ["vehicle.csv", "offences.csv"]
        assert any("transfer failed" in note for note in manifest.notes)
    finally:
        pinned.close()


def _raw_monitor(tmp_path):
    return MonitorEndpoint(
        "u02",
        store=SessionStore(tmp_path),
        registry=None,
        host="127.0.0.1",
        port=0,
        allowed_address="127.0.0.1",
    ).start()


def _read_all(sock):
    chunks = []
    while True:
        chunk = sock.recv(65536)
        if not chunk:
            return b"".join(chunks)
        chunks.append(chunk)


def test_raw_socket_session(tmp_path):
    monitor = _raw_monitor(tmp_path)
    try:
        with socket.create_connection(("127.0.0.1", monitor.port), timeout=10) as sock:
            sock.sendall(b"connect 0\nstopall 2000\n")
            files = dict(receive_files(_read_all(sock)))
        assert list(files) == ["ecg.csv", "emg.csv", "gsr.csv", "9dof.csv"]
        ecg_rows = files["ecg.csv"].decode("utf-8").strip().split("\n")[2:]
        assert len(ecg_rows) == 256
        manifest = monitor.wait_for_session(timeout=10)
        assert manifest.complete
    finally:
        monitor.stop()


def test_unknown_lines_are_ignored(tmp_path):
    monitor = _raw_monitor(tmp_path)
    try:
        with socket.create_connection(("127.0.0.1", monitor.port), timeout=10) as sock:
            sock.sendall(b"hello\nresume 10\nstopall 1000\n")
            files = receive_files(_read_all(sock))
        assert len(files) == 4
    finally:
        monitor.stop()


def test_early_close_marks_session_incomplete(tmp_path):
    monitor = _raw_monitor(tmp_path)
    try:
        with socket.create_connection(("127.0.0.1", monitor.port), timeout=10) as sock:
            sock.sendall(b"connect 0\npause 500\n")
        manifest = monitor.wait_for_session(timeout=10)
        assert not manifest.complete
        assert manifest.final
        assert verify_session(tmp_path / "u02" / manifest.session_id) == []
    finally:
        monitor.stop()


def test_fixed_clock_sessions_are_byte_identical(tmp_path):
    folders = []
    for name in ("one", "two"):
        running = Stack(tmp_path / name, clock=lambda: FIXED, seed=4)
        try:
            folders.append(running.drive(duration_s=10, seed=4, started_at=FIXED))
            running.monitor.wait_for_session(timeout=10)
        finally:
            running.close()
    first, second = folders
    assert first.name == second.name == "s-20240501T100000000Z"
    for path in sorted(first.iterdir()):
        assert path.read_bytes() == (second / path.name).read_bytes(), path.name


class FakeClock:
    def __init__(self):
        self.now = 1000.0

    def __call__(self):
        return self.now


def _wait_until(condition, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if condition():
            return True
        time.sleep(0.05)
    return False


def test_monitor_stays_discoverable_past_the_registry_ttl(tmp_path):
    clock = FakeClock()
    registry = Registry(ttl_s=300, clock=clock)
    server = RegistryServer(registry, host="127.0.0.1", port=0).start()
    monitor = MonitorEndpoint(
        "u01", store=SessionStore(tmp_path / "monitor"), registry=server.address, host="127.0.0.1", port=0, refresh_s=0.05
    ).start()
    try:
        registered_at = registry._entries[Config.GAME_NAME].registered_at
        clock.now += 301.0
        assert _wait_until(lambda: registry._entries[Config.GAME_NAME].registered_at > registered_at)
        params = DriveParams(user="u01", meta=META, duration_s=5, timeout_s=10)
        folder = drive_client(server.address, params, SessionStore(tmp_path / "client"))
        assert load_manifest(folder).complete
    finally:
        monitor.stop()
        server.stop()


def test_live_pause_keeps_samples_out_of_the_interval(tmp_path):
    monitor = MonitorEndpoint(
        "u02",
        sensors=[(SensorKind.ECG, SamplingRate(128.0))],
        store=SessionStore(tmp_path),
        registry=None,
        host="127.0.0.1",
        port=0,
        allowed_address="127.0.0.1",
        live=True,
    ).start()
    try:
        with socket.create_connection(("127.0.0.1", monitor.port), timeout=10) as sock:
            time.sleep(0.3)
            sock.sendall(b"pause\n")
            time.sleep(0.5)
            sock.sendall(b"resume\n")
            time.sleep(0.3)
            sock.sendall(b"stopall\n")
            files = dict(receive_files(_read_all(sock)))
        manifest = monitor.wait_for_session(timeout=10)
    finally:
        monitor.stop()
    [pause] = manifest.pause_intervals
    assert pause.end_ms is not None and pause.end_ms > pause.start_ms
    _, ecg = read_stream(tmp_path / "u02" / manifest.session_id, SensorKind.ECG)
    assert ecg
    assert not any(pause.contains(s.t) for s in ecg)
    assert any(s.t >= pause.end_ms for s in ecg)
    assert "ecg.csv" in files


def test_unreachable_monitor_leaves_no_session_folder(tmp_path):
    server = RegistryServer(Registry(), host="127.0.0.1", port=0).start()
    with socket.socket() as spare:
        spare.bind(("127.0.0.1", 0))
        dead_port = spare.getsockname()[1]
    try:
        RegistryClient(server.address, timeout_s=5).register(Config.GAME_NAME, HostData("127.0.0.1", dead_port))
        params = DriveParams(user="u01", meta=META, duration_s=5, timeout_s=5)
        store = SessionStore(tmp_path)
        with pytest.raises(DiscoveryFailure):
            drive_client(server.address, params, store)
        assert store.list_sessions() == []
    finally:
        server.stop()
