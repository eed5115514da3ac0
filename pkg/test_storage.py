#!/usr/bin/env python3
"""
Tests for session folders, data files and manifests.
"""

import json
import os
import re
import sys
import zlib
from datetime import datetime, timezone

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from drivemon.core.meta import ScenarioClass, SessionMeta
from drivemon.core.signal import Sample, SampleBatch, SamplingRate, SensorKind
from drivemon.errors import AlreadyExists, InvalidArgument, NotFound, ParseError
from drivemon.storage.session_store import (
    DataFileHeader,
    SessionStore,
    append_samples,
    close_session,
    file_checksum,
    load_manifest,
    read_data_file,
    read_stream,
    verify_session,
    write_stream,
)

META = SessionMeta(participant_id="p01", scenario_class=ScenarioClass.INTERURBAN, kss=6)
MOMENT = datetime(2024, 3, 5, 9, 30, 15, 250000, tzinfo=timezone.utc)


def test_open_session_layout(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", META, role="simulator")
    assert session.folder.parent == tmp_path / "u01"
    assert re.fullmatch(r"s-\d{8}T\d{9}Z", session.session_id)
    manifest = json.loads((session.folder / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["user_id"] == "u01"
    assert manifest["meta"]["participant_id"] == "p01"
    assert manifest["final"] is False


def test_session_id_from_start_time(tmp_path):
    store = SessionStore(tmp_path)
    assert store.open_session("u01", started_at=MOMENT, role="simulator").session_id == "s-20240305T093015250Z"
    monitor = store.open_session("u01", started_at=MOMENT)
    assert monitor.session_id == "m-20240305T093015250Z"
    assert monitor.manifest.started_at == "2024-03-05T09:30:15.250Z"


def test_forced_id_collision_is_refused(tmp_path):
    store = SessionStore(tmp_path)
    store.open_session("u01", META, session_id="s-fixed")
    with pytest.raises(AlreadyExists):
        store.open_session("u01", META, session_id="s-fixed")


@pytest.mark.parametrize("user", ["a/b", "", "..", "x" * 65, "u 01"])
def test_unsafe_user_ids(tmp_path, user):
    with pytest.raises(InvalidArgument):
        SessionStore(tmp_path).open_session(user, META)


def test_append_writes_plain_rows(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-rows")
    ecg = session.open_data_file(SensorKind.ECG, SamplingRate(128.0))
    append_samples(ecg, SampleBatch(SensorKind.ECG, [Sample(98, (0.42,))]))
    dof = session.open_data_file(SensorKind.DOF9, SamplingRate(10.2))
    append_samples(dof, SampleBatch(SensorKind.DOF9, [Sample(0, tuple(float(i) for i in range(9)))]))
    session.close()
    ecg_lines = ecg.path.read_text(encoding="utf-8").split("\n")
    assert ecg_lines[0].startswith("# format=v1 sensor=ECG fs_hz=128.0 user=u01 session=s-rows")
    assert ecg_lines[1] == "t_ms,ecg"
    assert ecg_lines[2] == "98,0.42"
    dof_row = dof.path.read_text(encoding="utf-8").split("\n")[2]
    assert len(dof_row.split(",")) == 10


def test_append_rejects_wrong_kind_and_disorder(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-bad")
    ecg = session.open_data_file(SensorKind.ECG, SamplingRate(128.0))
    with pytest.raises(InvalidArgument):
        append_samples(ecg, SampleBatch(SensorKind.EMG, [Sample(0, (1.0,))]))
    append_samples(ecg, SampleBatch(SensorKind.ECG, [Sample(16, (1.0,))]))
    with pytest.raises(InvalidArgument):
        append_samples(ecg, SampleBatch(SensorKind.ECG, [Sample(8, (1.0,))]))
    with pytest.raises(AlreadyExists):
        session.open_data_file(SensorKind.ECG, SamplingRate(128.0))
    session.close()
    with pytest.raises(InvalidArgument):
        append_samples(ecg, SampleBatch(SensorKind.ECG, [Sample(24, (1.0,))]))


@pytest.mark.parametrize("kind,hertz", [(SensorKind.ECG, 128.0), (SensorKind.EMG, 128.0), (SensorKind.GSR, 10.2), (SensorKind.DOF9, 10.2)])
def test_round_trip_is_identity(tmp_path, kind, hertz):
    fs = SamplingRate(hertz)
    rng = np.random.default_rng(kind.order)
    values = rng.normal(0.0, 1e3, (10_000, kind.channel_count)) * rng.choice([1e-9, 1.0, 1e9], (10_000, 1))
    samples = [Sample(fs.timestamp_ms(i), tuple(float(v) for v in row)) for i, row in enumerate(values)]
    session = SessionStore(tmp_path).open_session("u01", session_id="s-trip")
    write_stream(session, kind, fs, samples)
    manifest = close_session(session)
    header, replayed = read_stream(session.folder, kind)
    assert header.sensor is kind
    assert header.fs_hz == hertz
    assert replayed == samples
    assert verify_session(session.folder) == []
    entry = manifest.files[0]
    assert entry.name == kind.file_name
    assert entry.crc32 == f"{zlib.crc32((session.folder / entry.name).read_bytes()) & 0xFFFFFFFF:08x}"


def test_close_lists_sensor_files_then_extras(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-order")
    session.open_data_file(SensorKind.DOF9, SamplingRate(10.2))
    session.open_data_file(SensorKind.ECG, SamplingRate(128.0))
    session.write_file("vehicle.csv", b"t_s\n0\n")
    manifest = session.close()
    assert manifest.file_names() == ["ecg.csv", "9dof.csv", "vehicle.csv"]
    assert manifest.sensors == {"9DOF": 10.2, "ECG": 128.0}
    assert manifest.final


def test_close_with_zero_samples_and_twice(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-idle")
    session.open_data_file(SensorKind.GSR, SamplingRate(10.2))
    first = session.close()
    header, samples = read_data_file(session.folder / "gsr.csv")
    assert samples == []
    assert header.sensor is SensorKind.GSR
    second = session.close()
    assert second == first
    assert load_manifest(session.folder).final


def test_pause_interval_drops_samples(tmp_path):
    fs = SamplingRate(10.2)
    session = SessionStore(tmp_path).open_session("u01", session_id="s-pause")
    writer = session.open_data_file(SensorKind.GSR, fs)
    session.record_pause(2000)
    session.end_pause(3000)
    samples = [Sample(fs.timestamp_ms(i), (float(i),)) for i in range(51)]
    append_samples(writer, SampleBatch(SensorKind.GSR, samples))
    session.close()
    _, stored = read_data_file(writer.path)
    assert all(not 2000 <= s.t < 3000 for s in stored)
    assert len(stored) == 51 - (fs.count_before(3000) - fs.count_before(2000))
    manifest = load_manifest(session.folder)
    assert [(p.start_ms, p.end_ms) for p in manifest.pause_intervals] == [(2000, 3000)]


def test_end_pause_needs_open_interval(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-nopause")
    with pytest.raises(InvalidArgument):
        session.end_pause(100)


def test_verify_detects_tampering(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-tamper")
    write_stream(session, SensorKind.EMG, SamplingRate(128.0), [Sample(0, (1.0,)), Sample(8, (2.0,))])
    session.write_file("offences.csv", b"t_ms,kind,pos_x,pos_y\n")
    session.close()
    path = session.folder / "emg.csv"
    data = path.read_bytes()
    path.write_bytes(data.replace(b"8,2.0", b"8,3.0"))
    assert verify_session(session.folder) == ["emg.csv: checksum mismatch"]
    (session.folder / "offences.csv").unlink()
    assert "offences.csv: missing" in verify_session(session.folder)


def test_file_checksum_format(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"123456789")
    # the standard CRC-32 check value
    assert file_checksum(path) == "cbf43926"


def test_header_parse_errors():
    with pytest.raises(ParseError) as info:
        DataFileHeader.parse("t_ms,ecg")
    assert info.value.line == 1
    with pytest.raises(ParseError):
        DataFileHeader.parse("# format=v2 sensor=ECG fs_hz=128.0 user=u session=s started_at=x")
    header = DataFileHeader.parse("# format=v1 sensor=9DOF fs_hz=10.2 user=u01 session=s-1 started_at=2024")
    assert header.sensor is SensorKind.DOF9
    assert header.fs_hz == 10.2


def test_unsafe_extra_file_names(tmp_path):
    session = SessionStore(tmp_path).open_session("u01", session_id="s-names")
    with pytest.raises(InvalidArgument):
        session.write_file("../escape.csv", b"")
    session.write_file("vehicle.csv", b"")
    with pytest.raises(AlreadyExists):
        session.write_file("vehicle.csv", b"")


def test_list_sessions_and_missing_manifest(tmp_path):
    store = SessionStore(tmp_path)
    store.open_session("u01", session_id="s-a")
    store.open_session("u02", session_id="s-b")
    assert [p.name for p in store.list_sessions()] == ["s-a", "s-b"]
    assert [p.name for p in store.list_sessions("u02")] == ["s-b"]
    with pytest.raises(NotFound):
        load_manifest(tmp_path / "nowhere")
