#!/usr/bin/env python3
"""
Tests for the normality gate, correlations, study tables and report files.
"""

import math
import os
import sys

import numpy as np
import pandas as pd
import pytest
from scipy import stats

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from drivemon.analysis.loader import load_session, load_study_table
from drivemon.analysis.report import write_features, write_plot_data, write_study_report
from drivemon.analysis.stats import pearson, pearson_p, shapiro_wilk
from drivemon.analysis.study import (
    correlation_study,
    parse_pairs,
    preset_pairs,
    state_comparison,
)
from drivemon.core.meta import PhysicalState, ScenarioClass, SessionMeta
from drivemon.core.signal import SamplingRate, SensorKind
from drivemon.errors import DegenerateInput, InvalidArgument, MissingVariable, UnsupportedSize
from drivemon.features.gyro import low_attention_summary, steering_from_speeds
from drivemon.harness.vehicle import (
    OffenceKind,
    offences_csv,
    run_drive,
    vehicle_csv,
)
from drivemon.sim.script import ManeuverScript
from drivemon.sim.sensors import SourceConfig, generate
from drivemon.storage.session_store import SessionStore, write_stream


# normality


def test_shapiro_three_evenly_spaced_points():
    result = shapiro_wilk([1.0, 2.0, 3.0])
    assert result.w == pytest.approx(1.0)
    assert result.p == pytest.approx(1.0)
    assert result.normal_at_alpha


def test_shapiro_rejects_constant_and_tiny_samples():
    with pytest.raises(DegenerateInput):
        shapiro_wilk([4.0] * 10)
    with pytest.raises(UnsupportedSize):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(UnsupportedSize):
        shapiro_wilk(np.arange(5001.0))


@pytest.mark.parametrize("n", [3, 4, 5, 7, 11, 12, 20, 100, 1000])
def test_shapiro_matches_scipy(n):
    x = np.random.default_rng(n).gamma(2.0, 1.0, n)
    ours = shapiro_wilk(x)
    theirs = stats.shapiro(x)
    assert ours.w == pytest.approx(theirs.statistic, abs=1e-4)
    assert ours.p == pytest.approx(theirs.pvalue, abs=1e-3)
    assert ours.n == n


def test_shapiro_is_order_independent():
    x = np.random.default_rng(41).normal(size=50)
    assert shapiro_wilk(x).w == pytest.approx(shapiro_wilk(x[::-1]).w)


def test_shapiro_rejection_rate_on_normal_data():
    rng = np.random.default_rng(42)
    rejected = sum(not shapiro_wilk(rng.normal(size=25)).normal_at_alpha for _ in range(2000))
    assert 0.03 <= rejected / 2000 <= 0.07


def test_shapiro_flags_skewed_data():
    x = np.random.default_rng(43).exponential(size=200)
    assert not shapiro_wilk(x, alpha=0.05).normal_at_alpha


def test_shapiro_is_invariant_under_positive_affine_maps():
    x = np.random.default_rng(49).gamma(2.0, 1.0, 80)
    reference = shapiro_wilk(x)
    for scale, offset in ((1e-3, 0.0), (2.5, -40.0), (1e4, 1e3)):
        moved = shapiro_wilk(scale * x + offset)
        assert moved.w == pytest.approx(reference.w, abs=1e-9)
        assert moved.p == pytest.approx(reference.p, abs=1e-7)


# correlation


def test_pearson_examples():
    assert pearson([1, 2, 3, 4, 5], [2, 4, 5, 4, 5]) == pytest.approx(6 / math.sqrt(60))
    assert pearson([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_pearson_rejects_bad_input():
    with pytest.raises(InvalidArgument):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(InvalidArgument):
        pearson([1, 2], [1, 2])
    with pytest.raises(DegenerateInput):
        pearson([1, 1, 1], [1, 2, 3])


def test_pearson_matches_scipy():
    rng = np.random.default_rng(44)
    x = rng.normal(size=40)
    y = 0.3 * x + rng.normal(size=40)
    rho = pearson(x, y)
    reference = stats.pearsonr(x, y)
    assert rho == pytest.approx(reference.statistic, abs=1e-12)
    assert pearson_p(rho, 40) == pytest.approx(reference.pvalue, rel=1e-6)


@pytest.mark.parametrize("rho,n", [(0.1, 10), (0.54, 30), (-0.3, 100), (0.0, 5)])
def test_pearson_p_is_the_two_tailed_t_test(rho, n):
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    expected = 2 * stats.t.sf(abs(t), n - 2)
    assert pearson_p(rho, n) == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_pearson_p_limits():
    assert pearson_p(0.54, 30) < 0.05
    assert pearson_p(1.0, 10) == 0.0
    assert pearson_p(0.0, 10) == pytest.approx(1.0)
    with pytest.raises(InvalidArgument):
        pearson_p(0.5, 2)
    with pytest.raises(InvalidArgument):
        pearson_p(1.5, 10)


# study


def _planted_table(n=200, rho=0.6):
    grid = (np.arange(n) + 0.5) / n
    x = stats.norm.ppf(grid)
    noise = np.random.default_rng(45).permutation(stats.norm.ppf(grid))
    x = (x - x.mean()) / np.linalg.norm(x - x.mean())
    noise = noise - noise.mean()
    noise -= np.dot(noise, x) * x
    noise /= np.linalg.norm(noise)
    y = rho * x + math.sqrt(1 - rho * rho) * noise
    index = [f"u01/s-{i:03d}" for i in range(n)]
    return pd.DataFrame({"a": x, "b": y, "c": np.ones(n)}, index=index)


def test_planted_correlation_is_recovered():
    report = correlation_study(_planted_table(), [("a", "b")], by_scenario=False)
    [result] = report.correlations
    assert result.rho == pytest.approx(0.6, abs=1e-9)
    assert result.n == 200
    assert result.reported
    assert {r.variable for r in report.normality} == {"a", "b"}
    assert report.significant_only == [result]


def test_constant_variable_is_excluded_with_a_note():
    report = correlation_study(_planted_table(), [("a", "b"), ("a", "c")], by_scenario=False)
    assert [(c.x_name, c.y_name) for c in report.correlations] == [("a", "b")]
    assert any("c excluded" in note for note in report.notes)


def test_duplicate_and_reversed_pairs_are_tested_once():
    report = correlation_study(_planted_table(), [("a", "b"), ("b", "a"), ("a", "a")], by_scenario=False)
    assert len(report.correlations) == 1


def test_missing_variable_names_the_session():
    table = _planted_table(20)
    with pytest.raises(MissingVariable) as info:
        correlation_study(table, [("a", "zzz")], by_scenario=False)
    assert info.value.variable == "zzz"
    table.loc["u01/s-007", "b"] = math.nan
    with pytest.raises(MissingVariable) as info:
        correlation_study(table, [("a", "b")], by_scenario=False)
    assert info.value.session_id == "u01/s-007"


def test_scenarios_are_analysed_separately():
    table = _planted_table(40)
    table["scenario_class"] = ["URBAN"] * 20 + ["INTERURBAN"] * 18 + ["URBAN"] * 2
    report = correlation_study(table, [("a", "b")])
    assert sorted(c.group for c in report.correlations) == ["INTERURBAN", "URBAN"]
    assert {c.n for c in report.correlations} == {18, 22}


def test_small_group_is_skipped():
    table = _planted_table(10)
    table["scenario_class"] = ["URBAN"] * 8 + ["INTERURBAN"] * 2
    report = correlation_study(table, [("a", "b")])
    assert [c.group for c in report.correlations] == ["URBAN"]
    assert any(note.startswith("INTERURBAN") for note in report.notes)


def test_pairs_and_presets():
    assert parse_pairs("a:b, c:d,") == [("a", "b"), ("c", "d")]
    with pytest.raises(InvalidArgument):
        parse_pairs("a-b")
    assert len(preset_pairs("offences")) == 5 * 18
    assert ("offence_count", "kss") in preset_pairs("sleepiness")
    with pytest.raises(InvalidArgument):
        preset_pairs("weather")


def test_low_attention_summary():
    assert low_attention_summary(None) == 0
    fs = SamplingRate(10.2)
    assert low_attention_summary(steering_from_speeds([0.0] * 224 + [40.0] + [0.0] * 81, fs)) >= 1
    assert low_attention_summary(steering_from_speeds([3.0 if i % 2 else -3.0 for i in range(306)], fs)) == 0


def _state_table():
    rows = [
        ("p01", "RESTED", "URBAN", 800.0, 1.0, 2.0),
        ("p01", "TIRED", "URBAN", 900.0, 2.0, 4.0),
        ("p01", "TIRED", "URBAN", 950.0, 2.0, 4.0),
        ("p01", "UNSPECIFIED", "URBAN", 100.0, 50.0, 50.0),
        ("p02", "RESTED", "INTERURBAN", 700.0, 1.5, 3.0),
    ]
    return pd.DataFrame(
        rows,
        columns=["participant_id", "physical_state", "scenario_class", "hrv", "emg_mean", "gsr_mean"],
        index=[f"s{i}" for i in range(len(rows))],
    )


def test_state_comparison():
    out = state_comparison(_state_table())
    assert list(out.index) == ["p01", "p02"]
    assert out.loc["p01", "hrv.RESTED.URBAN"] == 800.0
    assert out.loc["p01", "hrv.TIRED.URBAN"] == pytest.approx(925.0)
    assert out.loc["p01", "emg.TIRED"] == pytest.approx(2 * out.loc["p01", "emg.RESTED"])
    assert out.loc["p02", "hrv.RESTED.INTERURBAN"] == 700.0
    assert math.isnan(out.loc["p02", "hrv.TIRED.INTERURBAN"])
    assert math.isnan(out.loc["p02", "gsr.TIRED"])
    assert math.isnan(out.loc["p01", "hrv.RESTED.INTERURBAN"])


def test_state_comparison_needs_labels():
    with pytest.raises(InvalidArgument):
        state_comparison(_state_table().drop(columns=["physical_state"]))


# loading and reports


def _recorded_session(tmp_path, participant, with_gyro, seed=0):
    meta = SessionMeta(
        participant_id=participant,
        scenario_class=ScenarioClass.URBAN,
        physical_state=PhysicalState.RESTED,
        kss=3,
    )
    session = SessionStore(tmp_path).open_session("u01", meta, session_id=f"s-{participant}", role="simulator")
    records, events = run_drive(meta, 30, seed=seed, offence_intensity=0.2)
    session.write_file("vehicle.csv", vehicle_csv(records))
    session.write_file("offences.csv", offences_csv(events))
    ecg_fs = SamplingRate(128.0)
    ecg, _ = generate(SourceConfig(SensorKind.ECG, ecg_fs, 30.0, seed=seed))
    write_stream(session, SensorKind.ECG, ecg_fs, ecg)
    slow = SamplingRate(10.2)
    gsr, _ = generate(SourceConfig(SensorKind.GSR, slow, 30.0, seed=seed))
    write_stream(session, SensorKind.GSR, slow, gsr)
    if with_gyro:
        script = ManeuverScript.of((90.0, 5.0), (-90.0, 5.0), (0.0, 20.0))
        dof, _ = generate(SourceConfig(SensorKind.DOF9, slow, 30.0, seed=seed), script)
        write_stream(session, SensorKind.DOF9, slow, dof)
    session.close()
    return session.folder, len(events)


def test_load_session_without_gyro(tmp_path):
    folder, offences = _recorded_session(tmp_path, "p01", with_gyro=False)
    features = load_session(folder)
    v = features.variables
    assert features.key == "u01/s-p01"
    assert v["participant_id"] == "p01"
    assert v["kss"] == 3.0
    assert math.isnan(v["sss"])
    assert v["duration_s"] == 30.0
    assert v["offence_count"] == offences
    assert v["offence_rate"] == pytest.approx(offences / 30)
    assert v["hrv"] == pytest.approx(800.0, abs=8.0)
    assert "gsr_mean" in v
    assert "angular_speed_mean" not in v
    assert features.steering is None


def test_load_session_with_gyro(tmp_path):
    folder, _ = _recorded_session(tmp_path, "p01", with_gyro=True)
    features = load_session(folder)
    assert features.variables["angular_speed_mean"] > 0
    assert features.variables["max_abs_angular_speed"] == pytest.approx(18.0, abs=1.0)
    assert features.steering.sample_count == 306
    assert features.variables["low_attention_periods"] == low_attention_summary(features.steering)


def test_study_table_is_sorted(tmp_path):
    folders = [_recorded_session(tmp_path, p, with_gyro=False, seed=i)[0] for i, p in enumerate(["p03", "p01", "p02"])]
    table = load_study_table(folders)
    assert list(table.index) == ["u01/s-p01", "u01/s-p02", "u01/s-p03"]
    assert load_study_table(reversed(folders)).equals(table)


def test_write_study_report(tmp_path):
    report = correlation_study(_planted_table(), [("a", "b")], by_scenario=False)
    report.state_comparison = state_comparison(_state_table())
    paths = write_study_report(report, tmp_path / "out")
    assert sorted(p.name for p in paths) == ["correlations.csv", "normality.csv", "state_comparison.csv", "summary.txt"]
    correlations = pd.read_csv(tmp_path / "out" / "correlations.csv")
    assert correlations.loc[0, "rho"] == pytest.approx(0.6, abs=1e-9)
    assert bool(correlations.loc[0, "reported"])
    assert "1 significant" in (tmp_path / "out" / "summary.txt").read_text(encoding="utf-8")


def test_write_features_and_plot_data(tmp_path):
    folder, _ = _recorded_session(tmp_path, "p01", with_gyro=True)
    features = load_session(folder)
    out = tmp_path / "features"
    assert write_features(features, out).name == "features.csv"
    row = pd.read_csv(out / "features.csv")
    assert row.loc[0, "session"] == "u01/s-p01"
    names = {p.name for p in write_plot_data(features, out)}
    assert {"plot_windows.csv", "plot_turn_blocks.csv", "plot_speed_events.csv", "plot_gsr_blocks.csv"} <= names
    windows = pd.read_csv(out / "plot_windows.csv")
    assert len(windows) == 6


def test_pearson_is_affine_invariant():
    rng = np.random.default_rng(46)
    x = rng.normal(size=60)
    y = x + rng.normal(size=60)
    rho = pearson(x, y)
    assert pearson(3.0 * x + 7.0, 0.5 * y - 2.0) == pytest.approx(rho, abs=1e-9)
    assert pearson(-x, y) == pytest.approx(-rho, abs=1e-9)


def test_independent_variables_rarely_correlate():
    rng = np.random.default_rng(47)
    reported = 0
    for _ in range(400):
        table = pd.DataFrame(rng.normal(size=(30, 2)), columns=["a", "b"], index=[f"u/s{i:02d}" for i in range(30)])
        reported += len(correlation_study(table, [("a", "b")], by_scenario=False).significant_only)
    assert reported / 400 <= 0.08


def test_speed_coupled_offences_are_recovered_from_recorded_drives(tmp_path):
    store = SessionStore(tmp_path)
    biases = np.random.default_rng(48).normal(0.0, 0.1, 200)
    kind = OffenceKind.NO_TURN_LIGHT_IN_TURN
    for i, bias in enumerate(biases):
        meta = SessionMeta(participant_id=f"p{i:03d}", scenario_class=ScenarioClass.INTERURBAN)
        session = store.open_session("u01", meta, session_id=f"s-{i:03d}", role="simulator")
        records, events = run_drive(
            meta, 300, seed=i, offence_intensity=0.05, kind_weights={kind: 1.0}, speed_coupling={kind: 4.0}, speed_bias=float(bias)
        )
        session.write_file("vehicle.csv", vehicle_csv(records))
        session.write_file("offences.csv", offences_csv(events))
        session.close()
    table = load_study_table(store.list_sessions())
    assert len(table) == 200
    report = correlation_study(table, [("mean_speed", f"offence_rate.{kind.value}")])
    [result] = report.correlations
    assert result.group == "INTERURBAN"
    assert result.n == 200
    assert result.rho > 0.4
    assert result.significant and result.gate_passed
    assert report.significant_only == [result]


def test_pearson_is_exactly_symmetric():
    rng = np.random.default_rng(50)
    for n in (3, 10, 1000):
        x = rng.normal(size=n)
        y = rng.exponential(size=n) + 0.2 * x
        assert pearson(x, y) == pearson(y, x)


def test_pearson_p_falls_with_correlation_strength_and_sample_size():
    rhos = np.linspace(0.0, 0.99, 100)
    for n in (5, 30, 200):
        ps = [pearson_p(rho, n) for rho in rhos]
        assert all(np.diff(ps) <= 0)
        assert [pearson_p(-rho, n) for rho in rhos] == ps
    for rho in (0.05, 0.3, 0.8):
        ps = [pearson_p(rho, n) for n in range(3, 400)]
        assert all(np.diff(ps) <= 0)


def test_study_ignores_row_order():
    table = _planted_table()
    table["d"] = np.random.default_rng(51).gamma(2.0, 1.0, len(table))
    table["scenario_class"] = ["URBAN" if i % 3 else "INTERURBAN" for i in range(len(table))]
    pairs = [("a", "b"), ("a", "d"), ("b", "d")]
    report = correlation_study(table, pairs)
    shuffled = correlation_study(table.sample(frac=1.0, random_state=52), pairs)
    assert shuffled.correlations == report.correlations
    assert shuffled.normality == report.normality
    assert shuffled.notes == report.notes
