"""
ECG R-peak detection, HRV metrics, and EMG/GSR session summaries.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from drivemon.core.signal import (
    BlockStats,
    RunningStats,
    Sample,
    SamplingRate,
    SensorKind,
    block_stats,
    channel_values,
)
from drivemon.errors import InsufficientData, InvalidArgument, UnsupportedRate
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

MIN_ECG_RATE_HZ = 100.0
REFRACTORY_MS = 250
BASELINE_WINDOW_S = 0.6
THRESHOLD_WINDOW_S = 2.0
THRESHOLD_FRACTION = 0.6

# 20-240 bpm
RR_MIN_MS = 250.0
RR_MAX_MS = 3000.0

UNITS = {SensorKind.EMG: "mV", SensorKind.GSR: "kOhm"}


def detect_r_peaks(ecg: Sequence[Sample], fs: SamplingRate) -> List[float]:
    """
    Locate R-peaks in an ECG trace.

    The signal is detrended by a centred 0.6 s moving mean, rectified, and compared
    against 0.6 x the running maximum over the last 2 s (the first 2 s use their own
    maximum). Local maxima above the threshold are peaks; within the 250 ms
    refractory period only the larger one survives. Each surviving peak is placed
    at the vertex of the parabola through it and its two neighbours.

    Args:
        ecg: ECG samples in timestamp order
        fs: ECG sampling rate, at least 100 Hz

    Returns:
        List[float]: Peak times in milliseconds, strictly increasing
    """
    if fs.hertz < MIN_ECG_RATE_HZ:
        raise UnsupportedRate(f"R-peak timing needs >= {MIN_ECG_RATE_HZ:g} Hz, got {fs}")
    if not ecg:
        return []

    values = channel_values(ecg)
    times = np.fromiter((s.t for s in ecg), dtype=np.int64)

    baseline_n = max(1, int(round(BASELINE_WINDOW_S * fs.hertz)))
    baseline = pd.Series(values).rolling(baseline_n, center=True, min_periods=1).mean().to_numpy()
    rectified = np.abs(values - baseline)
    threshold_n = max(1, int(round(THRESHOLD_WINDOW_S * fs.hertz)))
    # the first window doubles as the learning phase: its maximum seeds the threshold
    running_max = pd.Series(rectified).rolling(threshold_n).max().fillna(rectified[:threshold_n].max())
    threshold = THRESHOLD_FRACTION * running_max.to_numpy()

    padded = np.concatenate(([-np.inf], rectified, [-np.inf]))
    is_local_max = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] > padded[2:])
    candidates = np.flatnonzero(is_local_max & (rectified >= threshold) & (rectified > 0))

    chosen: List[int] = []
    for i in candidates:
        if chosen and times[i] - times[chosen[-1]] < REFRACTORY_MS:
            if rectified[i] > rectified[chosen[-1]]:
                chosen[-1] = int(i)
            continue
        chosen.append(int(i))

    peaks: List[float] = []
    for i in chosen:
        offset_ms = 0.0
        if 0 < i < len(rectified) - 1:
            left, mid, right = rectified[i - 1], rectified[i], rectified[i + 1]
            curvature = left - 2.0 * mid + right
            if curvature < 0:
                offset = float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))
                offset_ms = offset * (times[i + 1] - times[i - 1]) / 2.0
        peaks.append(float(times[i]) + offset_ms)
    logger.debug(f"detected {len(peaks)} R-peaks in {len(ecg)} samples")
    return peaks


@dataclass(frozen=True)
class RrSeries:
    rr_ms: Tuple[float, ...]
    artifacts: int = 0

    def __len__(self) -> int:
        return len(self.rr_ms)


def rr_intervals(peaks: Sequence[float]) -> RrSeries:
    """
    Beat-to-beat intervals between consecutive peaks.

    Intervals outside [250, 3000] ms are dropped and counted as artifacts.
    """
    if len(peaks) < 2:
        raise InsufficientData(f"need at least 2 peaks for an R-R interval, got {len(peaks)}")
    diffs = np.diff(np.asarray(peaks, dtype=float))
    if np.any(diffs <= 0):
        raise InvalidArgument("peak times must be strictly increasing")
    keep = (diffs >= RR_MIN_MS) & (diffs <= RR_MAX_MS)
    artifacts = int(np.count_nonzero(~keep))
    if artifacts:
        logger.warning(f"dropped {artifacts} R-R intervals outside [{RR_MIN_MS:g}, {RR_MAX_MS:g}] ms")
    if not keep.any():
        raise InsufficientData("no R-R interval survived artifact rejection")
    return RrSeries(tuple(float(x) for x in diffs[keep]), artifacts)


@dataclass(frozen=True)
class HrvReport:
    mean_rr_ms: float
    sdnn_ms: float
    rmssd_ms: float
    n_beats: int
    artifacts: int = 0

    @property
    def heart_rate_bpm(self) -> float:
        return 60000.0 / self.mean_rr_ms

    @property
    def mean_hrv(self) -> float:
        """The scalar reported as "mean HRV"."""
        return self.mean_rr_ms


def hrv_metrics(rr: RrSeries) -> HrvReport:
    if len(rr) < 2:
        raise InsufficientData(f"HRV needs at least 2 R-R intervals, got {len(rr)}")
    values = np.asarray(rr.rr_ms, dtype=float)
    successive = np.diff(values)
    return HrvReport(
        mean_rr_ms=float(values.mean()),
        sdnn_ms=float(values.std()),
        rmssd_ms=float(math.sqrt(np.mean(successive ** 2))),
        n_beats=len(values) + 1,
        artifacts=rr.artifacts,
    )


def ecg_hrv(ecg: Sequence[Sample], fs: SamplingRate) -> HrvReport:
    return hrv_metrics(rr_intervals(detect_r_peaks(ecg, fs)))


@dataclass(frozen=True)
class PhysioSummary:
    sensor: SensorKind
    session_mean: float
    session_std: float
    block_series: List[BlockStats] = field(default_factory=list)
    units: str = ""
    empty: bool = False


def physio_summary(kind: SensorKind, stream: Sequence[Sample]) -> PhysioSummary:
    """Session and per-block mean/std of an EMG or GSR stream."""
    if kind not in UNITS:
        raise InvalidArgument(f"physio summaries cover EMG and GSR, not {kind.value}")
    values = channel_values(stream)
    if values.size == 0:
        return PhysioSummary(kind, math.nan, math.nan, [], UNITS[kind], empty=True)
    stats = RunningStats.of(values)
    return PhysioSummary(
        sensor=kind,
        session_mean=stats.mean,
        session_std=stats.std,
        block_series=block_stats(values, Config.BLOCK_SIZE),
        units=UNITS[kind],
    )
