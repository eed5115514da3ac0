#!/usr/bin/env python3
"""
Command-line surface: registry, monitor, drive, analyze, features, replay.

Exit codes: 0 success, 1 other failure, 2 port failure, 3 connectivity failure,
64 usage, 65 empty input.
"""

import argparse
import glob
import logging
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from drivemon.analysis.loader import load_session, load_study_table
from drivemon.analysis.report import write_features, write_plot_data, write_study_report
from drivemon.analysis.study import PRESETS, correlation_study, parse_pairs, preset_pairs, state_comparison
from drivemon.core.meta import GearShift, PhysicalState, ScenarioClass, SessionMeta
from drivemon.core.signal import SamplingRate, SensorKind
from drivemon.errors import DiscoveryFailure, DriveMonError, InvalidArgument, StartupFailure
from drivemon.harness.client import DriveParams, drive_client
from drivemon.harness.vehicle import OffenceKind
from drivemon.protocol.monitor import MonitorEndpoint
from drivemon.protocol.registry import HostData, Registry, RegistryServer
from drivemon.sim.script import ManeuverScript
from drivemon.storage.session_store import (
    MANIFEST_NAME,
    SessionStore,
    load_manifest,
    read_data_file,
    verify_session,
)
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_STARTUP = 2
EXIT_DISCOVERY = 3
EXIT_USAGE = 64
EXIT_EMPTY = 65

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
SENSOR_FILES = {kind.file_name for kind in SensorKind}


@dataclass
class CliConfig:
    data_dir: str
    registry_host: str
    registry_port: int
    monitor_port: int
    log_level: str = "INFO"
    log_file: Optional[str] = None

    def __post_init__(self):
        for name in ("registry_port", "monitor_port"):
            port = getattr(self, name)
            if not 1024 <= port <= 65535:
                raise InvalidArgument(f"{name.replace('_', ' ')} must be in [1024, 65535], got {port}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise InvalidArgument(f"unknown log level {self.log_level!r}")
        self.log_level = self.log_level.upper()

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        return cls(
            data_dir=args.data_dir,
            registry_host=args.registry_host,
            registry_port=args.registry_port,
            monitor_port=args.port if "port" in args else Config.MONITOR_PORT,
            log_level=args.log_level,
            log_file=args.log_file,
        )

    @property
    def registry(self) -> HostData:
        return HostData(self.registry_host, self.registry_port)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )


def parse_sensors(text: str) -> List[Tuple[SensorKind, SamplingRate]]:
    """`ecg@128,emg@128,gsr@10.2,9dof@10.2` -> [(kind, rate), ...]"""
    sensors = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        name, sep, rate = token.partition("@")
        if not sep:
            raise InvalidArgument(f"sensor {token!r} is not of the form kind@hz")
        kind = SensorKind.parse(name)
        try:
            hertz = float(rate)
        except ValueError:
            raise InvalidArgument(f"sensor {token!r} has a malformed rate") from None
        if any(kind is k for k, _ in sensors):
            raise InvalidArgument(f"sensor {kind.value} given twice")
        sensors.append((kind, SamplingRate(hertz)))
    if not sensors:
        raise InvalidArgument("no sensors given")
    return sensors


def parse_clock(text: Optional[str]) -> Optional[datetime]:
    """ISO-8601 instant for --fixed-clock; naive values are taken as UTC."""
    if not text:
        return None
    try:
        moment = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise InvalidArgument(f"--fixed-clock expects an ISO-8601 instant, got {text!r}") from None
    return moment if moment.tzinfo else moment.replace(tzinfo=timezone.utc)


def parse_coupling(values: Optional[Sequence[str]]) -> Optional[Dict[OffenceKind, float]]:
    """`["no-turn-light-in-turn=4"]` -> {OffenceKind.NO_TURN_LIGHT_IN_TURN: 4.0}"""
    if not values:
        return None
    coupling: Dict[OffenceKind, float] = {}
    for value in values:
        name, sep, factor = value.partition("=")
        if not sep:
            raise InvalidArgument(f"coupling {value!r} is not of the form kind=factor")
        try:
            kind = OffenceKind(name.strip().lower())
        except ValueError:
            raise InvalidArgument(f"unknown offence kind {name!r}") from None
        try:
            coupling[kind] = float(factor)
        except ValueError:
            raise InvalidArgument(f"coupling {value!r} has a malformed factor") from None
        if not coupling[kind] >= 0:
            raise InvalidArgument(f"coupling factor for {kind.value} must be non-negative")
    return coupling


def _clock(fixed: Optional[datetime]) -> Callable[[], datetime]:
    if fixed is None:
        return lambda: datetime.now(timezone.utc)
    return lambda: fixed


def cmd_registry(args: argparse.Namespace, config: CliConfig) -> int:
    server = RegistryServer(Registry(args.ttl), host=args.host, port=config.registry_port)
    server.start()
    print(f"registry listening on {args.host}:{server.port}", flush=True)
    server.serve_forever()
    return EXIT_OK


def cmd_monitor(args: argparse.Namespace, config: CliConfig) -> int:
    sensors = parse_sensors(args.sensors)
    script = ManeuverScript.load(args.script) if args.script else None
    endpoint = MonitorEndpoint(
        args.user,
        sensors,
        store=SessionStore(config.data_dir),
        registry=config.registry,
        host=args.host,
        port=config.monitor_port,
        advertise_address=args.advertise,
        allowed_address=args.allow,
        script=script,
        seed=args.seed,
        noise_amplitude=args.noise,
        time_scale=args.time_scale,
        live=args.live,
        game_name=args.game_name,
        simulator_name=args.simulator_name,
        clock=_clock(parse_clock(args.fixed_clock)),
    )
    endpoint.start()
    print(f"monitor for {args.user} listening on {endpoint.address}", flush=True)
    if not args.sessions:
        endpoint.serve_forever()
        return EXIT_OK
    try:
        for _ in range(args.sessions):
            manifest = endpoint.wait_for_session()
            print(f"session {manifest.user_id}/{manifest.session_id} closed", flush=True)
    finally:
        endpoint.stop()
    return EXIT_OK


def cmd_drive(args: argparse.Namespace, config: CliConfig) -> int:
    meta = SessionMeta(
        participant_id=args.participant or args.user,
        scenario_class=ScenarioClass(args.scenario.upper()),
        gear_shift=GearShift(args.gear.upper()),
        physical_state=PhysicalState(args.state.upper()),
        kss=args.kss,
        sss=args.sss,
        ess=args.ess,
        license_years=args.license_years,
        game_experience=args.game_experience,
        racing_experience=args.racing_experience,
        age=args.age,
    )
    params = DriveParams(
        user=args.user,
        meta=meta,
        duration_s=args.duration,
        seed=args.seed,
        offence_intensity=args.intensity,
        speed_coupling=parse_coupling(args.couple),
        speed_bias=args.speed_bias,
        pause_at_s=args.pause_at,
        pause_len_s=args.pause_len,
        session_id=args.session_id,
        started_at=parse_clock(args.fixed_clock),
        game_name=args.game_name,
        simulator_name=args.simulator_name,
        timeout_s=args.timeout,
    )
    folder = drive_client(config.registry, params, SessionStore(config.data_dir))
    print(folder)
    return EXIT_OK


def _expand_sessions(patterns: Sequence[str], data_dir: str) -> List[Path]:
    if not patterns:
        return SessionStore(data_dir).list_sessions()
    found = set()
    for pattern in patterns:
        for match in sorted(glob.glob(pattern)):
            path = Path(match)
            if (path / MANIFEST_NAME).exists():
                found.add(path)
            elif path.is_dir():
                found.update(SessionStore(path).list_sessions())
    return sorted(found)


def cmd_analyze(args: argparse.Namespace, config: CliConfig) -> int:
    folders = []
    skipped = []
    for folder in _expand_sessions(args.sessions, config.data_dir):
        manifest = load_manifest(folder)
        # monitor-side copies lack the vehicle and offence logs
        if manifest.role == "monitor":
            logger.debug(f"skipping monitor-side session {folder}")
            continue
        if not (manifest.final and manifest.complete):
            reason = "not closed" if not manifest.final else "incomplete"
            logger.warning(f"skipping {reason} session {folder}")
            skipped.append(f"{manifest.user_id}/{manifest.session_id} skipped ({reason})")
            continue
        folders.append(folder)
    if not folders:
        print("no sessions matched", file=sys.stderr)
        return EXIT_EMPTY

    pairs = []
    if args.pairs:
        pairs += parse_pairs(args.pairs)
    for name in args.preset or []:
        pairs += preset_pairs(name)
    if not pairs and not args.state_comparison:
        pairs = preset_pairs("offences")

    table = load_study_table(folders)
    report = correlation_study(table, pairs, alpha=args.alpha, by_scenario=not args.no_split)
    report.notes = skipped + report.notes
    if args.state_comparison:
        report.state_comparison = state_comparison(table)
    paths = write_study_report(report, args.out)
    print(f"{len(folders)} sessions, {len(report.correlations)} pairs tested, {len(report.significant_only)} reported")
    for path in paths:
        print(path)
    return EXIT_OK


def cmd_features(args: argparse.Namespace, config: CliConfig) -> int:
    folder = Path(args.session)
    if not (folder / MANIFEST_NAME).exists():
        print(f"{folder} is not a session folder", file=sys.stderr)
        return EXIT_EMPTY
    features = load_session(folder)
    paths = [write_features(features, args.out)]
    if args.emit_plot_data:
        paths += write_plot_data(features, args.out)
    for note in features.notes:
        print(f"note: {note}")
    for path in paths:
        print(path)
    return EXIT_OK


def _summarize_file(path: Path) -> str:
    header, samples = read_data_file(path)
    span = f"t={samples[0].t}..{samples[-1].t} ms" if samples else "no samples"
    return f"{path.name}: {header.sensor.value} at {header.fs_hz!r} Hz, {len(samples)} samples, {span}"


def cmd_replay(args: argparse.Namespace, config: CliConfig) -> int:
    status = EXIT_OK
    for target in args.paths:
        path = Path(target)
        if path.is_file():
            print(_summarize_file(path))
            continue
        if not (path / MANIFEST_NAME).exists():
            print(f"{path}: not a data file or session folder", file=sys.stderr)
            return EXIT_EMPTY
        manifest = load_manifest(path)
        state = "complete" if manifest.complete else "incomplete"
        print(f"{manifest.user_id}/{manifest.session_id} ({manifest.role}, {state}, {len(manifest.files)} files)")
        for entry in manifest.files:
            if entry.name in SENSOR_FILES:
                print(f"  {_summarize_file(path / entry.name)}")
        for pause in manifest.pause_intervals:
            print(f"  pause {pause.start_ms}..{pause.end_ms} ms")
        if args.verify:
            problems = verify_session(path)
            for problem in problems:
                print(f"  {problem}")
            if problems:
                status = EXIT_FAILURE
            else:
                print("  checksums ok")
    return status


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", default=Config.DATA_DIR, help=f"Session root (default: {Config.DATA_DIR})")
    common.add_argument("--registry-host", default=Config.REGISTRY_HOST)
    common.add_argument("--registry-port", type=int, default=Config.REGISTRY_PORT)
    common.add_argument("--log-level", default=Config.LOG_LEVEL, type=str.upper, choices=LOG_LEVELS)
    common.add_argument("--log-file", default=Config.LOG_FILE)

    parser = _Parser(prog="drivemon", description="Driver monitoring: sensor sessions, simulated drives and studies")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("registry", parents=[common], help="Run the discovery registry")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", dest="registry_port", type=int, default=Config.REGISTRY_PORT)
    p.add_argument("--ttl", type=float, default=Config.REGISTRY_TTL_S, help="Seconds a registration stays visible")
    p.set_defaults(handler=cmd_registry)

    p = sub.add_parser("monitor", parents=[common], help="Run the sensor monitor endpoint")
    p.add_argument("--user", required=True)
    p.add_argument("--sensors", default="ecg@128,emg@128,gsr@10.2,9dof@10.2")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=Config.MONITOR_PORT)
    p.add_argument("--advertise", help="Address registered for this monitor")
    p.add_argument("--allow", help="Accept only this simulator address instead of looking it up")
    p.add_argument("--script", help="Steering maneuver script for the 9DOF source")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--live", action="store_true", help="Stream on the wall clock between commands")
    p.add_argument("--sessions", type=int, default=0, help="Exit after this many sessions (0 = serve forever)")
    p.add_argument("--game-name", default=Config.GAME_NAME)
    p.add_argument("--simulator-name", default=Config.SIMULATOR_NAME)
    p.add_argument("--fixed-clock", help="Freeze the session start time (ISO-8601)")
    p.set_defaults(handler=cmd_monitor)

    p = sub.add_parser("drive", parents=[common], help="Run a simulated drive against a monitor")
    p.add_argument("--user", default="u01")
    p.add_argument("--participant")
    p.add_argument("--duration", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", default="urban", choices=[s.value.lower() for s in ScenarioClass], type=str.lower)
    p.add_argument("--gear", default="automatic", choices=[g.value.lower() for g in GearShift], type=str.lower)
    p.add_argument("--state", default="unspecified", choices=[s.value.lower() for s in PhysicalState], type=str.lower)
    p.add_argument("--intensity", type=float, default=0.05, help="Offences per second at the reference speed")
    p.add_argument(
        "--couple", action="append", metavar="KIND=FACTOR", help="Scale an offence kind by 1 + FACTOR * speed / max speed"
    )
    p.add_argument("--speed-bias", type=float, default=0.0, help="Pull the speed towards (0.5 + bias) * max speed")
    p.add_argument("--pause-at", type=float)
    p.add_argument("--pause-len", type=float, default=0.0)
    p.add_argument("--kss", type=int)
    p.add_argument("--sss", type=int)
    p.add_argument("--ess", type=int)
    p.add_argument("--license-years", type=float, default=0.0)
    p.add_argument("--game-experience", type=int, default=1)
    p.add_argument("--racing-experience", type=int, default=1)
    p.add_argument("--age", type=float, default=30.0)
    p.add_argument("--session-id")
    p.add_argument("--game-name", default=Config.GAME_NAME)
    p.add_argument("--simulator-name", default=Config.SIMULATOR_NAME)
    p.add_argument("--timeout", type=float, default=Config.SOCKET_TIMEOUT_S)
    p.add_argument("--fixed-clock", help="Freeze the session start time (ISO-8601)")
    p.set_defaults(handler=cmd_drive)

    p = sub.add_parser("analyze", parents=[common], help="Normality and correlation study over sessions")
    p.add_argument("sessions", nargs="*", help="Session folders or globs (default: every session under --data-dir)")
    p.add_argument("--pairs", help="x:y[,x:y...]")
    p.add_argument("--preset", action="append", choices=sorted(PRESETS))
    p.add_argument("--alpha", type=float, default=Config.ALPHA)
    p.add_argument("--no-split", action="store_true", help="Do not separate urban and interurban sessions")
    p.add_argument("--state-comparison", action="store_true")
    p.add_argument("--out", default="report")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("features", parents=[common], help="Compute one session's features")
    p.add_argument("session")
    p.add_argument("--out", help="Output folder (default: the session folder)")
    p.add_argument("--emit-plot-data", action="store_true")
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("replay", parents=[common], help="Summarize recorded data files")
    p.add_argument("paths", nargs="+", help="Data files or session folders")
    p.add_argument("--verify", action="store_true", help="Check manifest sizes and checksums")
    p.set_defaults(handler=cmd_replay)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    setup_logging(args.log_level, args.log_file)
    try:
        config = CliConfig.from_args(args)
        return args.handler(args, config)
    except (InvalidArgument, ValidationError) as e:
        print(f"drivemon {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StartupFailure as e:
        logger.error(str(e))
        return EXIT_STARTUP
    except DiscoveryFailure as e:
        logger.error(str(e))
        return EXIT_DISCOVERY
    except (DriveMonError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("interrupted")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
