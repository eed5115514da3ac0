"""
Session folder -> study variables.

Each session contributes one row: questionnaire and scenario metadata from the
manifest, vehicle means from vehicle.csv, offence counts and rates from
offences.csv, and sensor features from whichever data files are present.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from drivemon.core.signal import SamplingRate, SensorKind
from drivemon.errors import DriveMonError, InsufficientData, NotFound, UnsupportedRate
from drivemon.features.gyro import SteeringState, low_attention_summary, steering_from_samples, summarize_steering
from drivemon.features.physio import HrvReport, PhysioSummary, ecg_hrv, physio_summary
from drivemon.harness.vehicle import OFFENCE_HEADER, VEHICLE_HEADER, OffenceKind
from drivemon.storage.session_store import SessionManifest, load_manifest, read_stream

logger = logging.getLogger(__name__)

META_FIELDS = (
    "kss", "sss", "ess", "license_years", "game_experience", "racing_experience", "age",
)
LABEL_FIELDS = ("participant_id", "scenario_class", "gear_shift", "physical_state")


@dataclass
class SessionFeatures:
    """Everything computed from one session folder."""

    key: str
    folder: Path
    manifest: SessionManifest
    variables: Dict[str, Union[float, str]] = field(default_factory=dict)
    steering: Optional[SteeringState] = None
    hrv: Optional[HrvReport] = None
    physio: Dict[SensorKind, PhysioSummary] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)


def session_key(manifest: SessionManifest) -> str:
    return f"{manifest.user_id}/{manifest.session_id}"


def _read_table(path: Path, header) -> Optional[pd.DataFrame]:
    if not path.exists():
        return None
    table = pd.read_csv(path)
    if tuple(table.columns) != header:
        raise DriveMonError(f"{path.name} has columns {list(table.columns)}, expected {list(header)}")
    return table


def _add_vehicle(features: SessionFeatures, vehicle: pd.DataFrame) -> None:
    v = features.variables
    v["duration_s"] = float(len(vehicle))
    v["mean_speed"] = float(vehicle["speed_kmh"].mean())
    v["mean_rpm"] = float(vehicle["rpm"].mean())
    v["mean_fuel"] = float(vehicle["fuel_lph"].mean())


def _add_offences(features: SessionFeatures, offences: pd.DataFrame) -> None:
    v = features.variables
    duration = v.get("duration_s")
    counts = offences["kind"].value_counts()
    v["offence_count"] = float(len(offences))
    if duration:
        v["offence_rate"] = len(offences) / duration
    for kind in OffenceKind:
        count = int(counts.get(kind.value, 0))
        v[f"offence_count.{kind.value}"] = float(count)
        if duration:
            v[f"offence_rate.{kind.value}"] = count / duration


def _add_gyro(features: SessionFeatures, fs: SamplingRate, samples) -> None:
    state = steering_from_samples(samples, fs)
    summary = summarize_steering(state)
    features.steering = state
    v = features.variables
    v["angular_speed_mean"] = summary.mean_abs_speed
    v["angular_speed_std"] = summary.std_abs_speed
    v["angular_speed_signed_mean"] = summary.mean_signed_speed
    v["angular_speed_signed_std"] = summary.std_signed_speed
    v["max_abs_angular_speed"] = summary.max_abs_speed
    v["zero_crossings"] = float(summary.zero_crossings)
    v["zero_crossings_per_s"] = summary.zero_crossings_per_s
    v["turns"] = float(summary.turns)
    v["unwrapped_deg"] = summary.unwrapped_deg
    v["low_attention_periods"] = float(low_attention_summary(state))
    for label, pct in zip(("ge10", "7_5to10", "5to7_5", "2_5to5", "lt2_5"), summary.bins.pct):
        v[f"speed_pct.{label}"] = pct


def _add_ecg(features: SessionFeatures, fs: SamplingRate, samples) -> None:
    try:
        report = ecg_hrv(samples, fs)
    except (InsufficientData, UnsupportedRate) as e:
        features.notes.append(f"no HRV: {e}")
        return
    features.hrv = report
    v = features.variables
    v["hrv"] = report.mean_hrv
    v["sdnn"] = report.sdnn_ms
    v["rmssd"] = report.rmssd_ms
    v["heart_rate_bpm"] = report.heart_rate_bpm
    v["rr_artifacts"] = float(report.artifacts)


def load_session(folder: Union[str, Path]) -> SessionFeatures:
    folder = Path(folder)
    manifest = load_manifest(folder)
    features = SessionFeatures(session_key(manifest), folder, manifest)
    v = features.variables
    if manifest.meta is not None:
        meta = manifest.meta
        for name in LABEL_FIELDS:
            value = getattr(meta, name)
            v[name] = value.value if hasattr(value, "value") else value
        for name in META_FIELDS:
            value = getattr(meta, name)
            v[name] = math.nan if value is None else float(value)

    vehicle = _read_table(folder / "vehicle.csv", VEHICLE_HEADER)
    if vehicle is not None:
        _add_vehicle(features, vehicle)
    offences = _read_table(folder / "offences.csv", OFFENCE_HEADER)
    if offences is not None:
        _add_offences(features, offences)

    for kind in SensorKind:
        header, samples = read_stream(folder, kind)
        if header is None:
            continue
        fs = SamplingRate(header.fs_hz)
        if kind is SensorKind.DOF9:
            _add_gyro(features, fs, samples)
        elif kind is SensorKind.ECG:
            _add_ecg(features, fs, samples)
        else:
            summary = physio_summary(kind, samples)
            features.physio[kind] = summary
            v[f"{kind.value.lower()}_mean"] = summary.session_mean
            v[f"{kind.value.lower()}_std"] = summary.session_std
    for note in features.notes:
        logger.warning(f"{features.key}: {note}")
    return features


def load_study_table(folders: Iterable[Union[str, Path]]) -> pd.DataFrame:
    """
    One row per session, indexed by `user/session` and sorted, so the table does not
    depend on the order folders are given in.
    """
    rows = {}
    for folder in folders:
        features = load_session(folder)
        rows[features.key] = features.variables
    if not rows:
        raise NotFound("no sessions to load")
    table = pd.DataFrame.from_dict(rows, orient="index").sort_index()
    table.index.name = "session"
    logger.info(f"loaded {len(table)} sessions with {table.shape[1]} variables")
    return table


def numeric_column(table: pd.DataFrame, name: str) -> np.ndarray:
    return pd.to_numeric(table[name], errors="coerce").to_numpy(dtype=float)
