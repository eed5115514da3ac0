"""
Headless driving-session simulation: per-second vehicle records and traffic offences.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from drivemon.core.meta import SessionMeta
from drivemon.errors import InvalidArgument, ParseError

logger = logging.getLogger(__name__)

VEHICLE_HEADER = ("t_s", "fuel_lph", "speed_kmh", "rpm", "pos_x", "pos_y")
OFFENCE_HEADER = ("t_ms", "kind", "pos_x", "pos_y")


class OffenceKind(str, Enum):
    COLLISION_WITH_PEDESTRIAN = "collision-with-pedestrian"
    COLLISION_WITH_VEHICLE = "collision-with-vehicle"
    COLLISION_WITH_MOTORCYCLE = "collision-with-motorcycle"
    COLLISION_WITH_CYCLIST = "collision-with-cyclist"
    COLLISION_WITH_STILL_OBJECT = "collision-with-still-object"
    LEAVING_THE_ROAD = "leaving-the-road"
    OVER_SPEED = "over-speed"
    UNDER_SPEED = "under-speed"
    LEAVING_ROUNDABOUT_INCORRECTLY = "leaving-roundabout-incorrectly"
    DRIVING_IN_ROUNDABOUT_INCORRECTLY = "driving-in-roundabout-incorrectly"
    LEAVING_JUNCTION_INCORRECTLY = "leaving-junction-incorrectly"
    FAILING_STOP_SIGN = "failing-stop-sign"
    FAILING_YIELD_SIGN = "failing-yield-sign"
    FAILING_TRAFFIC_LIGHT = "failing-traffic-light"
    NOT_RESPECTING_SAFETY_DISTANCE = "not-respecting-safety-distance"
    CROSSING_SOLID_LINE = "crossing-solid-line"
    NO_TURN_LIGHT_IN_TURN = "no-turn-light-in-turn"
    NO_TURN_LIGHT_OVERTAKING = "no-turn-light-overtaking"


@dataclass(frozen=True)
class VehicleRecord:
    t_s: int
    fuel_lph: float
    speed_kmh: float
    rpm: float
    position: Tuple[float, float]


@dataclass(frozen=True)
class OffenceEvent:
    kind: OffenceKind
    t_ms: int
    position: Tuple[float, float]


IDLE_RPM = 800.0
# (upper speed bound km/h, rpm per km/h) per gear
GEARS = ((20.0, 110.0), (40.0, 65.0), (60.0, 45.0), (90.0, 33.0), (float("inf"), 26.0))


def _rpm_for(speed_kmh: float) -> float:
    if speed_kmh <= 0:
        return IDLE_RPM
    for upper, ratio in GEARS:
        if speed_kmh <= upper:
            return IDLE_RPM + ratio * speed_kmh
    return IDLE_RPM


def run_drive(
    meta: SessionMeta,
    duration_s: int,
    seed: int,
    offence_intensity: float,
    kind_weights: Optional[Dict[OffenceKind, float]] = None,
    speed_coupling: Optional[Dict[OffenceKind, float]] = None,
    speed_bias: float = 0.0,
) -> Tuple[List[VehicleRecord], List[OffenceEvent]]:
    """
    Simulate one drive.

    Speed is a bounded random walk (urban <= 60 km/h, interurban <= 120 km/h), rpm
    follows speed through the gear table, fuel is affine in rpm. Offences come from a
    thinned Poisson process: candidates arrive at `offence_intensity` per second times
    the largest coupling factor, a kind is drawn from `kind_weights`, and it is kept
    with probability factor(kind, speed) / bound. Without coupling every candidate is
    kept, so the expected rate is exactly `offence_intensity`.

    Args:
        meta (SessionMeta): Scenario class sets the speed bound
        duration_s (int): Session length; one record per second
        seed (int): Seed for the whole simulation
        offence_intensity (float): Expected offences per second
        kind_weights: Relative weight per kind (default: uniform over all 18)
        speed_coupling: Per-kind c >= 0; the kind's weight is scaled by
            1 + c * speed / max_speed
        speed_bias (float): Fraction of max speed the random walk is pulled towards

    Returns:
        Tuple[List[VehicleRecord], List[OffenceEvent]]: Records and time-ordered offences
    """
    if duration_s < 1:
        raise InvalidArgument(f"duration_s must be >= 1, got {duration_s}")
    if offence_intensity < 0:
        raise InvalidArgument(f"offence_intensity must be non-negative, got {offence_intensity}")

    rng = np.random.default_rng(seed)
    vmax = meta.scenario_class.max_speed_kmh
    kinds = list(OffenceKind)
    weights = np.array([(kind_weights or {}).get(k, 1.0 if kind_weights is None else 0.0) for k in kinds], dtype=float)
    if weights.sum() <= 0:
        raise InvalidArgument("offence kind weights must not all be zero")
    weights /= weights.sum()
    coupling = np.array([(speed_coupling or {}).get(k, 0.0) for k in kinds], dtype=float)
    bound = 1.0 + float(coupling.max())

    target = (0.5 + speed_bias) * vmax
    speed, heading, x, y = 0.0, 0.0, 0.0, 0.0
    records: List[VehicleRecord] = []
    events: List[OffenceEvent] = []
    for t in range(duration_s):
        speed = float(np.clip(speed + 0.1 * (target - speed) + rng.normal(0.0, 3.0), 0.0, vmax))
        rpm = _rpm_for(speed)
        fuel = max(0.0, 0.4 + 0.0012 * rpm + rng.normal(0.0, 0.05))
        heading += rng.normal(0.0, 0.05)
        x += speed / 3.6 * math.cos(heading)
        y += speed / 3.6 * math.sin(heading)
        records.append(VehicleRecord(t, fuel, speed, rpm, (x, y)))

        for _ in range(rng.poisson(offence_intensity * bound)):
            k = rng.choice(len(kinds), p=weights)
            keep = (1.0 + coupling[k] * speed / vmax) / bound
            if rng.random() < keep:
                events.append(OffenceEvent(kinds[k], t * 1000 + int(rng.integers(0, 1000)), (x, y)))

    events.sort(key=lambda e: e.t_ms)
    logger.info(
        f"drive for {meta.participant_id}: {duration_s} s, {len(events)} offences, "
        f"mean speed {np.mean([r.speed_kmh for r in records]):.1f} km/h"
    )
    return records, events


def offence_rate(events: List[OffenceEvent], duration_s: int, kind: Optional[OffenceKind] = None) -> float:
    """Offences per second, optionally restricted to one kind."""
    if duration_s < 1:
        raise InvalidArgument(f"duration_s must be >= 1, got {duration_s}")
    count = sum(1 for e in events if kind is None or e.kind is kind)
    return count / duration_s


def vehicle_csv(records: Iterable[VehicleRecord]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(VEHICLE_HEADER)
    for r in records:
        writer.writerow([r.t_s, repr(r.fuel_lph), repr(r.speed_kmh), repr(r.rpm), repr(r.position[0]), repr(r.position[1])])
    return buffer.getvalue().encode("utf-8")


def offences_csv(events: Iterable[OffenceEvent]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(OFFENCE_HEADER)
    for e in events:
        writer.writerow([e.t_ms, e.kind.value, repr(e.position[0]), repr(e.position[1])])
    return buffer.getvalue().encode("utf-8")


def read_offences_csv(path: Union[str, Path]) -> List[OffenceEvent]:
    events = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != OFFENCE_HEADER:
            raise ParseError(f"expected header {','.join(OFFENCE_HEADER)}", 1)
        for number, row in enumerate(reader, start=2):
            try:
                t_ms, kind, px, py = row
                events.append(OffenceEvent(OffenceKind(kind), int(t_ms), (float(px), float(py))))
            except ValueError as e:
                raise ParseError(str(e), number) from e
    return events


def read_vehicle_csv(path: Union[str, Path]) -> List[VehicleRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != VEHICLE_HEADER:
            raise ParseError(f"expected header {','.join(VEHICLE_HEADER)}", 1)
        for number, row in enumerate(reader, start=2):
            try:
                t_s, fuel, speed, rpm, px, py = row
                records.append(VehicleRecord(int(t_s), float(fuel), float(speed), float(rpm), (float(px), float(py))))
            except ValueError as e:
                raise ParseError(str(e), number) from e
    return records
