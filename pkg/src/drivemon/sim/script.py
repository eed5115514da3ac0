"""
Steering maneuver scripts.

One segment per line: `turn <delta_deg> <duration_s>` or `hold <duration_s>`.
Blank lines and `#` comments are ignored.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

from drivemon.errors import InvalidArgument, ParseError


@dataclass(frozen=True)
class ManeuverSegment:
    delta_deg: float
    duration_s: float

    def __post_init__(self):
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise InvalidArgument(f"segment duration must be positive, got {self.duration_s}")
        if not math.isfinite(self.delta_deg):
            raise InvalidArgument(f"segment angle must be finite, got {self.delta_deg}")

    @property
    def is_hold(self) -> bool:
        return self.delta_deg == 0

    def to_line(self) -> str:
        if self.is_hold:
            return f"hold {self.duration_s!r}"
        return f"turn {self.delta_deg!r} {self.duration_s!r}"


@dataclass(frozen=True)
class ManeuverScript:
    segments: List[ManeuverSegment] = field(default_factory=list)

    @property
    def duration_s(self) -> float:
        return math.fsum(s.duration_s for s in self.segments)

    @property
    def total_delta_deg(self) -> float:
        return math.fsum(s.delta_deg for s in self.segments)

    def to_text(self) -> str:
        return "".join(f"{s.to_line()}\n" for s in self.segments)

    @classmethod
    def parse(cls, text: str) -> "ManeuverScript":
        segments = []
        for number, raw in enumerate(text.split("\n"), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "turn" and len(parts) == 3:
                    segments.append(ManeuverSegment(float(parts[1]), float(parts[2])))
                elif parts[0] == "hold" and len(parts) == 2:
                    segments.append(ManeuverSegment(0.0, float(parts[1])))
                else:
                    raise ParseError(f"expected 'turn <deg> <s>' or 'hold <s>', got {line!r}", number)
            except ValueError as e:
                raise ParseError(str(e), number) from e
        return cls(segments)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ManeuverScript":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def of(cls, *segments: tuple) -> "ManeuverScript":
        """Build from (delta_deg, duration_s) pairs; a delta of 0 is a hold."""
        return cls([ManeuverSegment(float(d), float(s)) for d, s in segments])


# Small alternating corrections every second, looped by the monitor when no script is given.
DEFAULT_SCRIPT = ManeuverScript.of(
    (4.0, 1.0), (-4.0, 1.0), (3.0, 1.0), (-3.0, 1.0), (90.0, 2.0), (0.0, 1.0), (-90.0, 2.0), (0.0, 1.0),
)
