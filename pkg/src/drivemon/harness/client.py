"""
Simulator-side protocol client: discover the monitor, drive a session against it,
and collect the returned sensor files together with the vehicle and offence logs.
"""

import logging
import socket
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

from drivemon.core.meta import SessionMeta
from drivemon.errors import DiscoveryFailure, FramingError, IncompleteTransfer, InvalidArgument, NotFound, TransferAborted
from drivemon.harness.vehicle import OffenceKind, offences_csv, run_drive, vehicle_csv
from drivemon.protocol.registry import HostData, RegistryClient, local_address_towards
from drivemon.protocol.session import Command, format_command
from drivemon.protocol.transfer import receive_files
from drivemon.storage.session_store import SessionStore
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)


@dataclass
class DriveParams:
    """Run parameters for one simulated drive."""

    user: str
    meta: SessionMeta
    duration_s: int = 60
    seed: int = 0
    offence_intensity: float = 0.05
    pause_at_s: Optional[float] = None
    pause_len_s: float = 0.0
    kind_weights: Optional[Dict[OffenceKind, float]] = None
    speed_coupling: Optional[Dict[OffenceKind, float]] = None
    speed_bias: float = 0.0
    session_id: Optional[str] = None
    started_at: Optional[datetime] = None
    game_name: str = field(default_factory=lambda: Config.GAME_NAME)
    simulator_name: str = field(default_factory=lambda: Config.SIMULATOR_NAME)
    timeout_s: float = field(default_factory=lambda: Config.SOCKET_TIMEOUT_S)

    def __post_init__(self):
        if self.duration_s < 1:
            raise InvalidArgument(f"duration_s must be >= 1, got {self.duration_s}")
        if self.pause_at_s is not None:
            if self.pause_len_s <= 0:
                raise InvalidArgument("a pause needs a positive length")
            if not (0 < self.pause_at_s and self.pause_at_s + self.pause_len_s < self.duration_s):
                raise InvalidArgument(
                    f"pause [{self.pause_at_s}, {self.pause_at_s + self.pause_len_s}] s must lie inside the drive"
                )


def drive_client(registry: HostData, params: DriveParams, store: Optional[SessionStore] = None) -> Path:
    """
    Run one complete session against a registered monitor.

    Trace: lookup -> register own address -> connect -> [pause, resume] -> stopall ->
    receive files. Every command carries its session-clock stamp, so the monitor's
    recording spans exactly the drive.

    Args:
        registry (HostData): Discovery registry
        params (DriveParams): Drive and session parameters
        store (SessionStore): Where the session folder is created

    Returns:
        Path: The session folder holding the sensor files, vehicle.csv, offences.csv and manifest.json
    """
    store = store or SessionStore()
    client = RegistryClient(registry, params.timeout_s)
    try:
        monitor = client.lookup(params.game_name)
    except NotFound as e:
        raise DiscoveryFailure(f"no monitor registered: {e}") from e
    logger.info(f"found monitor {params.game_name} at {monitor}")

    records, events = run_drive(
        params.meta,
        params.duration_s,
        params.seed,
        params.offence_intensity,
        kind_weights=params.kind_weights,
        speed_coupling=params.speed_coupling,
        speed_bias=params.speed_bias,
    )
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.settimeout(params.timeout_s)
    try:
        sock.bind((local_address_towards(monitor.address), 0))
        own = HostData(*sock.getsockname())
        client.register(params.simulator_name, own)
        try:
            sock.connect((monitor.address, monitor.port))
        except OSError as e:
            raise DiscoveryFailure(f"monitor at {monitor} unreachable: {e}") from e
        # the folder only exists once the monitor has accepted the connection
        session = store.open_session(
            params.user, params.meta, session_id=params.session_id, started_at=params.started_at, role="simulator"
        )
        session.set_allowed_address(own.address)
    except BaseException:
        sock.close()
        raise

    try:
        end_ms = params.duration_s * 1000
        lines = [format_command(Command.CONNECT, 0)]
        if params.pause_at_s is not None:
            start_ms = int(round(params.pause_at_s * 1000))
            stop_ms = int(round((params.pause_at_s + params.pause_len_s) * 1000))
            lines += [format_command(Command.PAUSE, start_ms), format_command(Command.RESUME, stop_ms)]
            session.record_pause(start_ms)
            session.end_pause(stop_ms)
        lines.append(format_command(Command.STOPALL, end_ms))
        try:
            sock.sendall("".join(lines).encode("utf-8"))
            with sock.makefile("rb") as reader:
                received = receive_files(reader)
        except (FramingError, IncompleteTransfer, TransferAborted, OSError) as e:
            logger.error(f"transfer from {monitor} failed: {e}")
            session.mark_incomplete(f"transfer failed: {e}")
            received = []
    finally:
        sock.close()

    for name, data in received:
        session.write_file(name, data)
    session.write_file("vehicle.csv", vehicle_csv(records))
    session.write_file("offences.csv", offences_csv(events))
    manifest = session.close()
    logger.info(
        f"session {manifest.session_id}: {len(received)} sensor files, {len(records)} vehicle records, "
        f"{len(events)} offences"
    )
    return session.folder
