"""
Deterministic synthetic sensor sources standing in for the wearable hardware.

A SensorSource produces samples incrementally in index order, so the monitor can
stream it against a session clock; `generate` runs the same source for a fixed
duration and returns the ground truth alongside the samples.
"""

import heapq
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from drivemon.core.signal import TURN_TOLERANCE_DEG, Sample, SamplingRate, SensorKind
from drivemon.errors import InvalidArgument
from drivemon.sim.script import ManeuverScript

logger = logging.getLogger(__name__)

ECG_WIDTH_MS = 40.0
# a 40 ms wide R-wave taken as full width at half maximum
ECG_SIGMA_MS = ECG_WIDTH_MS / (2.0 * math.sqrt(2.0 * math.log(2.0)))
ECG_AMPLITUDE_MV = 1.0
GSR_STEP_TAU_S = 2.0
GRAVITY = 9.81
MAGNETIC_FIELD = (0.2, 0.0, 0.4)

DEFAULT_PARAMS: Dict[SensorKind, Dict[str, Any]] = {
    SensorKind.ECG: {"heart_rate_bpm": 75.0, "rr_jitter_ms": 0.0},
    SensorKind.EMG: {
        "offset_mv": 0.5,
        "rest_mv": 0.02,
        "burst_mv": 0.4,
        "amplitude": 1.0,
        "burst_period_s": 5.0,
        "burst_length_s": 1.0,
        "burst_start_s": 2.0,
        "bursts": None,
    },
    SensorKind.GSR: {"baseline_kohm": 250.0, "drift_kohm_per_min": -2.0, "steps": ()},
    SensorKind.DOF9: {},
}


@dataclass
class SourceConfig:
    kind: SensorKind
    fs: SamplingRate
    duration_s: float
    seed: int = 0
    noise_amplitude: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise InvalidArgument(f"duration_s must be positive, got {self.duration_s}")
        if self.noise_amplitude < 0:
            raise InvalidArgument(f"noise_amplitude must be non-negative, got {self.noise_amplitude}")

    def param(self, name: str) -> Any:
        return self.params.get(name, DEFAULT_PARAMS[self.kind].get(name))


@dataclass
class GroundTruth:
    kind: SensorKind
    beat_times_ms: List[float] = field(default_factory=list)
    positions_deg: List[float] = field(default_factory=list)
    turns: Optional[int] = None
    segment_boundaries: List[Tuple[int, float]] = field(default_factory=list)
    burst_windows_ms: List[Tuple[float, float]] = field(default_factory=list)


class SensorSource:
    """
    Incremental, seeded generator for one sensor stream.

    Samples must be taken in index order (take_until / take); identical
    (config, script) always yields identical samples.
    """

    def __init__(self, config: SourceConfig, script: Optional[ManeuverScript] = None, loop_script: bool = False):
        if config.kind is SensorKind.DOF9 and script is None:
            raise InvalidArgument("a 9DOF source needs a maneuver script")
        if config.kind is not SensorKind.DOF9 and script is not None:
            raise InvalidArgument(f"maneuver scripts only drive 9DOF sources, not {config.kind.value}")
        self.config = config
        self.kind = config.kind
        self.fs = config.fs
        self.script = script
        self.loop_script = loop_script
        self.next_index = 0
        self._noise_rng = np.random.default_rng([config.seed, config.kind.order, 0])
        self._shape_rng = np.random.default_rng([config.seed, config.kind.order, 1])
        self._beats: List[float] = []
        if script is not None:
            self._segment_counts, self._segment_speeds = self._layout_script(script)

    def take_until(self, t_ms: int) -> List[Sample]:
        """All not-yet-taken samples with timestamp strictly below `t_ms`."""
        return self.take(self.fs.count_before(t_ms) - self.next_index)

    def take(self, count: int) -> List[Sample]:
        if count <= 0:
            return []
        indices = np.arange(self.next_index, self.next_index + count)
        self.next_index += count
        times_ms = np.array([self.fs.timestamp_ms(int(i)) for i in indices], dtype=np.int64)
        values = self._values(indices, times_ms)
        return [Sample(int(t), tuple(float(v) for v in row)) for t, row in zip(times_ms, values)]

    def _values(self, indices: np.ndarray, times_ms: np.ndarray) -> np.ndarray:
        noise_amp = self.config.noise_amplitude
        if self.kind is SensorKind.ECG:
            clean = self._ecg(times_ms.astype(float))
        elif self.kind is SensorKind.EMG:
            clean = self._emg(times_ms.astype(float))
        elif self.kind is SensorKind.GSR:
            clean = self._gsr(times_ms / 1000.0)
        else:
            noise = self._noise_rng.standard_normal((len(indices), 9)) * noise_amp
            rows = np.zeros((len(indices), 9))
            rows[:, 2] = GRAVITY
            rows[:, 5] = self._gyro_speeds(indices)
            rows[:, 6:9] = MAGNETIC_FIELD
            return rows + noise
        noise = self._noise_rng.standard_normal(len(indices)) * noise_amp
        return (clean + noise)[:, None]

    # ECG

    def _beat_times_until(self, t_ms: float) -> np.ndarray:
        interval = 60000.0 / float(self.config.param("heart_rate_bpm"))
        jitter = float(self.config.param("rr_jitter_ms") or 0.0)
        if not self._beats:
            self._beats.append(interval / 2.0)
        while self._beats[-1] <= t_ms + interval:
            step = interval + (self._shape_rng.normal(0.0, jitter) if jitter else 0.0)
            self._beats.append(self._beats[-1] + max(step, interval / 4.0))
        return np.asarray(self._beats)

    def _ecg(self, t_ms: np.ndarray) -> np.ndarray:
        beats = self._beat_times_until(float(t_ms.max()))
        pos = np.clip(np.searchsorted(beats, t_ms), 1, len(beats) - 1)
        nearest = np.where(np.abs(t_ms - beats[pos - 1]) <= np.abs(t_ms - beats[pos]), beats[pos - 1], beats[pos])
        return ECG_AMPLITUDE_MV * np.exp(-0.5 * ((t_ms - nearest) / ECG_SIGMA_MS) ** 2)

    # EMG

    def burst_windows_ms(self, until_ms: float) -> List[Tuple[float, float]]:
        explicit = self.config.param("bursts")
        if explicit is not None:
            return [(float(a) * 1000.0, float(b) * 1000.0) for a, b in explicit]
        period = float(self.config.param("burst_period_s")) * 1000.0
        length = float(self.config.param("burst_length_s")) * 1000.0
        start = float(self.config.param("burst_start_s")) * 1000.0
        windows = []
        while start < until_ms:
            windows.append((start, start + length))
            start += period
        return windows

    def _emg(self, t_ms: np.ndarray) -> np.ndarray:
        envelope = np.full(t_ms.shape, float(self.config.param("rest_mv")))
        for start, end in self.burst_windows_ms(float(t_ms.max()) + 1.0):
            envelope[(t_ms >= start) & (t_ms < end)] = float(self.config.param("burst_mv"))
        activity = self._shape_rng.standard_normal(len(t_ms)) * envelope
        return float(self.config.param("amplitude")) * (float(self.config.param("offset_mv")) + activity)

    # GSR

    def _gsr(self, t_s: np.ndarray) -> np.ndarray:
        value = float(self.config.param("baseline_kohm")) + float(self.config.param("drift_kohm_per_min")) * t_s / 60.0
        for step_s, delta in self.config.param("steps") or ():
            after = t_s >= step_s
            value = value + np.where(after, delta * (1.0 - np.exp(-(t_s - step_s) / GSR_STEP_TAU_S)), 0.0)
        return value

    # 9DOF

    def _layout_script(self, script: ManeuverScript) -> Tuple[List[int], List[float]]:
        """Samples per segment and the constant speed that integrates to its delta exactly."""
        counts, speeds = [], []
        elapsed = Fraction(0)
        for segment in script.segments:
            start = self.fs.count_before(math.floor(elapsed * 1000 + Fraction(1, 2)))
            elapsed += Fraction(repr(segment.duration_s))
            end = self.fs.count_before(math.floor(elapsed * 1000 + Fraction(1, 2)))
            n = end - start
            if n == 0 and not segment.is_hold:
                raise InvalidArgument(f"turn segment of {segment.duration_s} s is shorter than one sample at {self.fs}")
            counts.append(n)
            speeds.append(segment.delta_deg * self.fs.hertz / n if n else 0.0)
        if sum(counts) == 0:
            raise InvalidArgument("maneuver script covers no samples")
        return counts, speeds

    def _gyro_speeds(self, indices: np.ndarray) -> np.ndarray:
        bounds = np.cumsum(self._segment_counts)
        total = int(bounds[-1])
        local = indices % total if self.loop_script else indices
        segment = np.searchsorted(bounds, local, side="right")
        speeds = np.append(np.asarray(self._segment_speeds), 0.0)
        return speeds[np.minimum(segment, len(self._segment_speeds))]

    def ground_truth(self, duration_s: float, sample_count: int) -> GroundTruth:
        truth = GroundTruth(self.kind)
        if self.kind is SensorKind.ECG:
            duration_ms = duration_s * 1000.0
            truth.beat_times_ms = [b for b in self._beat_times_until(duration_ms) if b < duration_ms]
        elif self.kind is SensorKind.EMG:
            truth.burst_windows_ms = self.burst_windows_ms(duration_s * 1000.0)
        elif self.kind is SensorKind.DOF9:
            self._gyro_truth(truth, sample_count)
        return truth

    def _gyro_truth(self, truth: GroundTruth, sample_count: int) -> None:
        # exact rational positions, independent of the float path the features take
        position = Fraction(0)
        wrapped = Fraction(0)
        turns = 0
        index = 0
        for n, segment in zip(self._segment_counts, self.script.segments):
            step = Fraction(repr(segment.delta_deg)) / n if n else Fraction(0)
            for _ in range(n):
                if index >= sample_count:
                    break
                position += step
                wrapped += step
                if abs(wrapped) > 360 + Fraction(TURN_TOLERANCE_DEG):
                    wrapped -= 360 if wrapped > 0 else -360
                    turns += 1
                truth.positions_deg.append(float(position))
                index += 1
            truth.segment_boundaries.append((index, float(position)))
        truth.turns = turns


def generate(config: SourceConfig, script: Optional[ManeuverScript] = None) -> Tuple[List[Sample], GroundTruth]:
    """
    Generate a complete stream and its ground truth.

    Args:
        config (SourceConfig): Sensor, rate, duration, seed, noise and kind parameters
        script (ManeuverScript): Steering script, required for (and only for) 9DOF

    Returns:
        Tuple[List[Sample], GroundTruth]: round(duration_s * hertz) samples and the truth
    """
    if script is not None and abs(script.duration_s - config.duration_s) > 1e-9:
        raise InvalidArgument(
            f"script lasts {script.duration_s} s but the source lasts {config.duration_s} s"
        )
    source = SensorSource(config, script)
    samples = source.take(config.fs.sample_count(config.duration_s))
    logger.debug(f"generated {len(samples)} {config.kind.value} samples at {config.fs}")
    return samples, source.ground_truth(config.duration_s, len(samples))


def replay(path: Union[str, Path]) -> List[Sample]:
    """Re-ingest a data file written by the storage module."""
    from drivemon.storage.session_store import read_data_file

    _, samples = read_data_file(path)
    return samples


class DeliveredSample(NamedTuple):
    kind: SensorKind
    sample: Sample


def schedule_delivery(
    sources: Sequence[Tuple[SourceConfig, Optional[ManeuverScript]]], max_workers: int = 4
) -> List[DeliveredSample]:
    """
    Merge several sources sharing one session clock into a single time-ordered stream.

    Ties on timestamp go ECG < EMG < GSR < 9DOF; each source keeps its own order.
    """
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        streams = list(pool.map(lambda pair: generate(*pair)[0], sources))
    tagged = [
        [DeliveredSample(config.kind, s) for s in stream] for (config, _), stream in zip(sources, streams)
    ]
    return list(heapq.merge(*tagged, key=lambda d: (d.sample.t, d.kind.order)))
