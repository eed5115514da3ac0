#!/usr/bin/env python3
"""
Tests for the headless drive simulation and its CSV outputs.
"""

import os
import sys

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from drivemon.core.meta import ScenarioClass, SessionMeta
from drivemon.errors import InvalidArgument, ParseError
from drivemon.harness.client import DriveParams
from drivemon.harness.vehicle import (
    OffenceEvent,
    OffenceKind,
    offence_rate,
    offences_csv,
    read_offences_csv,
    read_vehicle_csv,
    run_drive,
    vehicle_csv,
)

URBAN = SessionMeta(participant_id="p01")
INTERURBAN = SessionMeta(participant_id="p02", scenario_class=ScenarioClass.INTERURBAN)


def _events(count):
    return [OffenceEvent(OffenceKind.OVER_SPEED, i, (0.0, 0.0)) for i in range(count)]


def test_one_record_per_second():
    records, _ = run_drive(URBAN, 10, seed=1, offence_intensity=0.1)
    assert [r.t_s for r in records] == list(range(10))


def test_zero_intensity_means_no_offences():
    _, events = run_drive(URBAN, 600, seed=2, offence_intensity=0.0)
    assert events == []


def test_offence_rate_follows_intensity():
    rates = []
    for seed in range(50):
        _, events = run_drive(INTERURBAN, 600, seed=seed, offence_intensity=0.142)
        rates.append(offence_rate(events, 600))
    assert np.mean(rates) == pytest.approx(0.142, abs=0.02)


def test_offences_are_time_ordered_inside_the_drive():
    _, events = run_drive(URBAN, 120, seed=3, offence_intensity=0.5)
    times = [e.t_ms for e in events]
    assert times == sorted(times)
    assert all(0 <= t < 120_000 for t in times)


def test_speed_bounds_per_scenario():
    urban, _ = run_drive(URBAN, 300, seed=4, offence_intensity=0.0, speed_bias=0.5)
    assert max(r.speed_kmh for r in urban) <= 60.0
    interurban, _ = run_drive(INTERURBAN, 300, seed=4, offence_intensity=0.0, speed_bias=0.5)
    assert max(r.speed_kmh for r in interurban) <= 120.0
    assert min(r.speed_kmh for r in interurban) >= 0.0


def test_same_seed_same_drive():
    assert run_drive(URBAN, 60, seed=5, offence_intensity=0.2) == run_drive(URBAN, 60, seed=5, offence_intensity=0.2)


def test_kind_weights_restrict_kinds():
    _, events = run_drive(URBAN, 300, seed=6, offence_intensity=0.3, kind_weights={OffenceKind.LEAVING_THE_ROAD: 1.0})
    assert events
    assert {e.kind for e in events} == {OffenceKind.LEAVING_THE_ROAD}


def test_run_drive_rejects_bad_arguments():
    with pytest.raises(InvalidArgument):
        run_drive(URBAN, 0, seed=0, offence_intensity=0.1)
    with pytest.raises(InvalidArgument):
        run_drive(URBAN, 10, seed=0, offence_intensity=-0.1)
    with pytest.raises(InvalidArgument):
        run_drive(URBAN, 10, seed=0, offence_intensity=0.1, kind_weights={OffenceKind.OVER_SPEED: 0.0})


def test_offence_rate_examples():
    assert offence_rate(_events(10), 100) == 0.1
    assert offence_rate([], 100) == 0.0
    assert offence_rate(_events(85), 600) == pytest.approx(0.1417, abs=1e-4)
    assert offence_rate(_events(4), 10, OffenceKind.UNDER_SPEED) == 0.0
    with pytest.raises(InvalidArgument):
        offence_rate(_events(1), 0)


def test_csv_round_trip(tmp_path):
    records, events = run_drive(INTERURBAN, 30, seed=7, offence_intensity=0.4)
    (tmp_path / "vehicle.csv").write_bytes(vehicle_csv(records))
    (tmp_path / "offences.csv").write_bytes(offences_csv(events))
    assert read_vehicle_csv(tmp_path / "vehicle.csv") == records
    assert read_offences_csv(tmp_path / "offences.csv") == events


def test_csv_parse_errors_name_the_line(tmp_path):
    path = tmp_path / "offences.csv"
    path.write_text("t_ms,kind,pos_x,pos_y\n10,over-speed,0.0,0.0\n20,speeding,0.0,0.0\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_offences_csv(path)
    assert info.value.line == 3
    path.write_text("t_s,speed\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_vehicle_csv(path)
    assert info.value.line == 1


@pytest.mark.parametrize("field,value", [("kss", 10), ("sss", 0), ("ess", 25), ("game_experience", 11), ("participant_id", "")])
def test_session_meta_bounds(field, value):
    with pytest.raises(ValidationError):
        SessionMeta(**{"participant_id": "p01", field: value})


@pytest.mark.parametrize("at,length", [(20.0, 0.0), (0.0, 5.0), (55.0, 10.0)])
def test_drive_params_pause_must_fit(at, length):
    with pytest.raises(InvalidArgument):
        DriveParams(user="u01", meta=URBAN, duration_s=60, pause_at_s=at, pause_len_s=length)


def test_drive_params_accept_inner_pause():
    params = DriveParams(user="u01", meta=URBAN, duration_s=60, pause_at_s=20.0, pause_len_s=10.0)
    assert params.pause_at_s + params.pause_len_s < params.duration_s
