"""
Shared sample types and streaming statistics.

Every other module builds on the types defined here: the sensor kinds, the sampling
rate with its timestamp rule, timestamped samples, and the running / block statistics
used for the EMG, GSR and turn-counter summaries.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from drivemon.errors import InvalidArgument


class SensorKind(str, Enum):
    """Sensor modules streamed by the monitor. Values are the serialized names."""

    ECG = "ECG"
    EMG = "EMG"
    GSR = "GSR"
    DOF9 = "9DOF"

    @property
    def channel_count(self) -> int:
        return 9 if self is SensorKind.DOF9 else 1

    @property
    def order(self) -> int:
        """Tie-break rank when merging streams: ECG < EMG < GSR < 9DOF."""
        return _KIND_ORDER[self]

    @property
    def file_name(self) -> str:
        return f"{self.value.lower()}.csv"

    @property
    def channel_names(self) -> Tuple[str, ...]:
        if self is SensorKind.DOF9:
            return DOF9_CHANNELS
        return (self.value.lower(),)

    @classmethod
    def parse(cls, token: str) -> "SensorKind":
        """Accepts the serialized name in any case ("ecg", "9dof", "DOF9")."""
        normalized = token.strip().upper()
        if normalized == "DOF9":
            normalized = "9DOF"
        try:
            return cls(normalized)
        except ValueError:
            raise InvalidArgument(f"unknown sensor kind: {token!r}") from None


_KIND_ORDER = {SensorKind.ECG: 0, SensorKind.EMG: 1, SensorKind.GSR: 2, SensorKind.DOF9: 3}

DOF9_CHANNELS = (
    "accel_x", "accel_y", "accel_z",
    "gyro_x", "gyro_y", "gyro_z",
    "mag_x", "mag_y", "mag_z",
)
GYRO_Z_CHANNEL = DOF9_CHANNELS.index("gyro_z")

# a revolution counts once |position| exceeds 360 by more than this
TURN_TOLERANCE_DEG = 1e-9


@dataclass(frozen=True)
class SamplingRate:
    hertz: float

    def __post_init__(self):
        if not math.isfinite(self.hertz) or self.hertz <= 0:
            raise InvalidArgument(f"sampling rate must be positive, got {self.hertz}")

    @property
    def exact(self) -> Fraction:
        # 10.2 must mean 51/5, not the nearest binary double
        return Fraction(repr(float(self.hertz)))

    def timestamp_ms(self, index: int) -> int:
        """
        Timestamp of sample `index`, rounded from the exact rational accumulation.

        Args:
            index (int): Zero-based sample index

        Returns:
            int: round(index * 1000 / hertz), halves rounded up
        """
        return math.floor(Fraction(index * 1000) / self.exact + Fraction(1, 2))

    def count_before(self, t_ms: int) -> int:
        """Number of samples whose timestamp is strictly below `t_ms`."""
        if t_ms <= 0:
            return 0
        # candidate from the exact inverse, then settle the rounding edge
        i = math.floor(Fraction(t_ms) * self.exact / 1000)
        while self.timestamp_ms(i) < t_ms:
            i += 1
        while i > 0 and self.timestamp_ms(i - 1) >= t_ms:
            i -= 1
        return i

    def sample_count(self, duration_s: float) -> int:
        return int(round(duration_s * self.hertz))

    def __str__(self) -> str:
        return f"{self.hertz:g} Hz"


@dataclass(frozen=True)
class Sample:
    t: int
    channels: Tuple[float, ...]

    def __post_init__(self):
        if self.t < 0:
            raise InvalidArgument(f"sample timestamp must be non-negative, got {self.t}")


@dataclass
class SampleBatch:
    kind: SensorKind
    samples: List[Sample] = field(default_factory=list)

    def __post_init__(self):
        expected = self.kind.channel_count
        for sample in self.samples:
            if len(sample.channels) != expected:
                raise InvalidArgument(
                    f"{self.kind.value} sample at t={sample.t} has {len(sample.channels)} channels, expected {expected}"
                )

    def __len__(self) -> int:
        return len(self.samples)


def channel_values(samples: Iterable[Sample], channel: int = 0) -> np.ndarray:
    return np.fromiter((s.channels[channel] for s in samples), dtype=float)


@dataclass(frozen=True)
class RunningStats:
    """Single-pass mean and population variance (Welford recurrence)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def update(self, x: float) -> "RunningStats":
        return running_update(self, x)

    def merge(self, other: "RunningStats") -> "RunningStats":
        """Count-weighted combination, equal to running over both streams in sequence."""
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @classmethod
    def of(cls, values: Iterable[float]) -> "RunningStats":
        stats = cls()
        for x in values:
            stats = running_update(stats, x)
        return stats


def running_update(state: RunningStats, x: float) -> RunningStats:
    count = state.count + 1
    delta = x - state.mean
    mean = state.mean + delta / count
    m2 = state.m2 + delta * (x - mean)
    return RunningStats(count, mean, max(m2, 0.0))


@dataclass(frozen=True)
class BlockStats:
    block_index: int
    mean: float
    std: float
    partial: bool = False


def block_stats(stream: Sequence[float], block_size: int = 20) -> List[BlockStats]:
    """
    Mean and population std of each completed block of `block_size` samples.

    A trailing partial block is withheld; use BlockAccumulator.close() to flush it.

    Args:
        stream: Sample values in arrival order
        block_size: Samples per block

    Returns:
        List[BlockStats]: One entry per completed block, in order
    """
    if block_size < 1:
        raise InvalidArgument(f"block_size must be >= 1, got {block_size}")
    values = np.asarray(stream, dtype=float)
    n_blocks = len(values) // block_size
    if n_blocks == 0:
        return []
    blocks = values[: n_blocks * block_size].reshape(n_blocks, block_size)
    means = blocks.mean(axis=1)
    stds = blocks.std(axis=1)
    return [BlockStats(i, float(m), float(s)) for i, (m, s) in enumerate(zip(means, stds))]


class BlockAccumulator:
    """Streaming counterpart of block_stats; emits a block each time one completes."""

    def __init__(self, block_size: int = 20):
        if block_size < 1:
            raise InvalidArgument(f"block_size must be >= 1, got {block_size}")
        self.block_size = block_size
        self.blocks: List[BlockStats] = []
        self._pending: List[float] = []
        self._closed = False

    def push(self, x: float) -> Optional[BlockStats]:
        self._pending.append(x)
        if len(self._pending) < self.block_size:
            return None
        block = self._summarize(partial=False)
        self._pending = []
        return block

    def close(self) -> Optional[BlockStats]:
        """Flush the trailing partial block, flagged partial. Idempotent."""
        if self._closed or not self._pending:
            self._closed = True
            return None
        self._closed = True
        block = self._summarize(partial=True)
        self._pending = []
        return block

    def complete_blocks(self) -> List[BlockStats]:
        return [b for b in self.blocks if not b.partial]

    def _summarize(self, partial: bool) -> BlockStats:
        values = np.asarray(self._pending, dtype=float)
        block = BlockStats(len(self.blocks), float(values.mean()), float(values.std()), partial)
        self.blocks.append(block)
        return block
