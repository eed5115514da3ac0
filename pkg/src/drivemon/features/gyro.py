"""
Steering-wheel features computed from the z-axis angular speed of the 9DOF unit.

Positive speed is counter-clockwise (a left turn). Binning, per-bin means and the
maximum tracker work on absolute speed; zero-crossing detection uses the signed value.
"""

import copy
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from drivemon.core.signal import (
    BlockAccumulator,
    BlockStats,
    GYRO_Z_CHANNEL,
    TURN_TOLERANCE_DEG,
    RunningStats,
    Sample,
    SamplingRate,
)
from drivemon.errors import InvalidArgument, OutOfRange
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

# lower edges of the five intervals, fastest first
SPEED_BIN_EDGES = (10.0, 7.5, 5.0, 2.5, 0.0)
SPEED_BIN_LABELS = (">=10", "7.5-10", "5-7.5", "2.5-5", "<2.5")


def integrate_position(prev_deg: float, omega_dps: float, fs: SamplingRate) -> float:
    """
    Advance the wheel position by one sample.

    Args:
        prev_deg (float): Previous position in degrees
        omega_dps (float): Present angular speed in degrees/second
        fs (SamplingRate): Gyroscope sampling rate

    Returns:
        float: prev_deg + omega_dps / fs, without wrapping
    """
    if not (math.isfinite(prev_deg) and math.isfinite(omega_dps)):
        raise InvalidArgument(f"non-finite gyro input: position={prev_deg}, speed={omega_dps}")
    return prev_deg + omega_dps / fs.hertz


def _sign(x: float) -> int:
    x = float(x)
    return (x > 0) - (x < 0)


@dataclass
class SteeringState:
    """
    Everything the monitor tracks for one gyro stream.

    Single writer: the update functions mutate the state in place and return it.
    Use snapshot() for an independent copy.
    """

    fs: SamplingRate
    position_deg: float = 0.0
    turns: int = 0
    zero_crossings: int = 0
    prev_speed_sign: int = 0
    max_abs_speed: float = 0.0
    max_update_events: List[int] = field(default_factory=list)
    crossing_events: List[int] = field(default_factory=list)
    turn_blocks: BlockAccumulator = field(default_factory=lambda: BlockAccumulator(Config.BLOCK_SIZE))
    turn_block_stats: RunningStats = field(default_factory=RunningStats)
    unwrapped_deg: float = 0.0
    sample_count: int = 0
    signed_speed: RunningStats = field(default_factory=RunningStats)
    abs_speed: RunningStats = field(default_factory=RunningStats)
    speeds: List[float] = field(default_factory=list)

    def snapshot(self) -> "SteeringState":
        return copy.deepcopy(self)


def normalize_and_count_turns(state: SteeringState, raw_position: float) -> SteeringState:
    """Wrap a freshly integrated position back under one revolution, counting the turn."""
    if not abs(raw_position) < 720:
        raise OutOfRange(f"raw position {raw_position} exceeds one extra revolution")
    if abs(raw_position) > 360 + TURN_TOLERANCE_DEG:
        state.position_deg = raw_position - 360 * _sign(raw_position)
        state.turns += 1
    else:
        state.position_deg = raw_position
    return state


def classify_speed_interval(omega_dps: float) -> int:
    """Bin index of |omega| in the five lower-inclusive intervals (0 = fastest)."""
    magnitude = abs(omega_dps)
    for index, edge in enumerate(SPEED_BIN_EDGES):
        if magnitude >= edge:
            return index
    return len(SPEED_BIN_EDGES) - 1


@dataclass(frozen=True)
class SpeedBinReport:
    counts: Tuple[int, ...]
    pct: Tuple[float, ...]
    mean: Tuple[float, ...]
    std: Tuple[float, ...]
    empty: bool = False

    @property
    def total(self) -> int:
        return sum(self.counts)


def interval_summary(speeds: Sequence[float]) -> SpeedBinReport:
    """
    Per-interval count, percentage, mean and population std of absolute speed.

    An empty input yields zero counts, NaN percentages and `empty=True`.
    """
    magnitudes = np.abs(np.asarray(speeds, dtype=float))
    total = len(magnitudes)
    bins = np.array([classify_speed_interval(m) for m in magnitudes], dtype=int)
    counts, pct, means, stds = [], [], [], []
    for index in range(len(SPEED_BIN_EDGES)):
        members = magnitudes[bins == index]
        counts.append(int(members.size))
        pct.append(100.0 * members.size / total if total else math.nan)
        means.append(float(members.mean()) if members.size else 0.0)
        stds.append(float(members.std()) if members.size else 0.0)
    return SpeedBinReport(tuple(counts), tuple(pct), tuple(means), tuple(stds), empty=total == 0)


def update_zero_crossings(state: SteeringState, omega_dps: float) -> SteeringState:
    """
    Count a crossing when two nonzero speeds of opposite sign follow each other.

    Zero samples are skipped: they neither count nor reset the remembered sign.
    """
    sign = _sign(omega_dps)
    if sign == 0:
        return state
    if state.prev_speed_sign != 0 and sign != state.prev_speed_sign:
        state.zero_crossings += 1
        state.crossing_events.append(state.sample_count)
    state.prev_speed_sign = sign
    return state


def update_max_abs(state: SteeringState, omega_dps: float, sample_index: int) -> SteeringState:
    magnitude = abs(omega_dps)
    if magnitude > state.max_abs_speed:
        state.max_abs_speed = magnitude
        state.max_update_events.append(sample_index)
    return state


def feed_speed(state: SteeringState, omega_dps: float) -> SteeringState:
    """Run one gyro sample through every steering feature."""
    raw = integrate_position(state.position_deg, omega_dps, state.fs)
    state.unwrapped_deg += omega_dps / state.fs.hertz
    normalize_and_count_turns(state, raw)
    update_zero_crossings(state, omega_dps)
    update_max_abs(state, omega_dps, state.sample_count)
    block = state.turn_blocks.push(float(state.turns))
    if block is not None:
        state.turn_block_stats = state.turn_block_stats.update(block.mean)
    state.signed_speed = state.signed_speed.update(omega_dps)
    state.abs_speed = state.abs_speed.update(abs(omega_dps))
    state.speeds.append(omega_dps)
    state.sample_count += 1
    return state


def steering_from_speeds(speeds: Iterable[float], fs: SamplingRate) -> SteeringState:
    state = SteeringState(fs=fs)
    for omega in speeds:
        feed_speed(state, omega)
    return state


def steering_from_samples(samples: Iterable[Sample], fs: SamplingRate) -> SteeringState:
    """Feed the gyro z-channel of 9DOF samples."""
    return steering_from_speeds((s.channels[GYRO_Z_CHANNEL] for s in samples), fs)


def turn_count_block_stats(state: SteeringState) -> List[BlockStats]:
    """Mean/std of the turn counter per set of 20 observations (completed sets only)."""
    return state.turn_blocks.complete_blocks()


@dataclass(frozen=True)
class AttentionWindow:
    index: int
    span_ms: int
    sample_count: int
    crossings_in_window: int
    max_updated_in_window: bool
    low_attention: bool = False


def attention_windows(state: SteeringState, span_ms: int = None) -> List[AttentionWindow]:
    """
    Partition the stream into consecutive fixed spans and tally events per span.

    Samples belong to the span containing their timestamp. Only complete spans are
    returned; a trailing partial span is left out.
    """
    span_ms = span_ms or Config.WINDOW_MS
    fs = state.fs
    n = state.sample_count
    crossings = Counter(fs.timestamp_ms(i) // span_ms for i in state.crossing_events)
    max_updates = {fs.timestamp_ms(i) // span_ms for i in state.max_update_events}
    windows = []
    index = 0
    while True:
        start = fs.count_before(index * span_ms)
        end = fs.count_before((index + 1) * span_ms)
        if fs.timestamp_ms(n) < (index + 1) * span_ms:
            # the span would need samples beyond the end of the stream
            break
        windows.append(
            AttentionWindow(
                index=index,
                span_ms=span_ms,
                sample_count=end - start,
                crossings_in_window=crossings[index],
                max_updated_in_window=index in max_updates,
            )
        )
        index += 1
    return windows


def classify_low_attention(windows: Sequence[AttentionWindow]) -> List[AttentionWindow]:
    """
    Flag windows where, together with the previous window, the wheel never crossed zero
    speed and the maximum absolute speed was raised. Window 0 is judged on itself.
    """
    flagged = []
    for i, window in enumerate(windows):
        union = [window] if i == 0 else [windows[i - 1], window]
        no_crossing = sum(w.crossings_in_window for w in union) == 0
        max_raised = any(w.max_updated_in_window for w in union)
        flagged.append(replace(window, low_attention=no_crossing and max_raised))
    low = sum(w.low_attention for w in flagged)
    if low:
        logger.info(f"{low} of {len(flagged)} windows flagged as low attention")
    return flagged


def low_attention_summary(state: Optional[SteeringState]) -> int:
    """Number of low-attention windows in one session's gyro stream."""
    if state is None or state.sample_count == 0:
        return 0
    return sum(w.low_attention for w in classify_low_attention(attention_windows(state)))


@dataclass(frozen=True)
class SteeringSummary:
    """Session-level gyro aggregates."""

    samples: int
    duration_s: float
    turns: int
    unwrapped_deg: float
    zero_crossings: int
    zero_crossings_per_s: float
    max_abs_speed: float
    mean_signed_speed: float
    std_signed_speed: float
    mean_abs_speed: float
    std_abs_speed: float
    bins: SpeedBinReport


def summarize_steering(state: SteeringState) -> SteeringSummary:
    duration_s = state.sample_count / state.fs.hertz
    return SteeringSummary(
        samples=state.sample_count,
        duration_s=duration_s,
        turns=state.turns,
        unwrapped_deg=state.unwrapped_deg,
        zero_crossings=state.zero_crossings,
        zero_crossings_per_s=state.zero_crossings / duration_s if duration_s else 0.0,
        max_abs_speed=state.max_abs_speed,
        mean_signed_speed=state.signed_speed.mean,
        std_signed_speed=state.signed_speed.std,
        mean_abs_speed=state.abs_speed.mean,
        std_abs_speed=state.abs_speed.std,
        bins=interval_summary(state.speeds),
    )
