"""
Monitor endpoint: accepts the simulator's connection, streams the simulated sensors
into a session folder, honours pause/resume, and sends the files back on stopall.
"""

import logging
import queue
import socket
import threading
import time
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from drivemon.core.signal import SampleBatch, SamplingRate, SensorKind
from drivemon.errors import DiscoveryFailure, DriveMonError, NotFound, ProtocolError, StartupFailure
from drivemon.protocol.actions import ActionDispatcher
from drivemon.protocol.registry import HostData, RegistryClient, local_address_towards
from drivemon.protocol.session import (
    Action,
    Command,
    Connection,
    Phase,
    SessionState,
    TransportClose,
    monitor_handle,
    parse_command_line,
)
from drivemon.protocol.transfer import send_paths
from drivemon.sim.script import DEFAULT_SCRIPT, ManeuverScript
from drivemon.sim.sensors import SensorSource, SourceConfig
from drivemon.storage.session_store import Session, SessionManifest, SessionStore, append_samples
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

# nominal length handed to open-ended streaming sources; they do not stop at it
STREAM_HORIZON_S = 24 * 3600.0
LIVE_TICK_S = 0.1
MAX_COMMAND_LINE = 256

# the final-test configuration: ECG and EMG at 128 Hz, GSR and 9DOF at 10.2 Hz
DEFAULT_SENSORS: Tuple[Tuple[SensorKind, SamplingRate], ...] = (
    (SensorKind.ECG, SamplingRate(128.0)),
    (SensorKind.EMG, SamplingRate(128.0)),
    (SensorKind.GSR, SamplingRate(10.2)),
    (SensorKind.DOF9, SamplingRate(10.2)),
)


class SensorStreamer:
    """
    Pulls samples from every source up to the session clock and appends them to the
    session's data files. Samples falling inside a pause are generated and dropped.
    """

    def __init__(
        self,
        session: Session,
        sensors: Sequence[Tuple[SensorKind, SamplingRate]],
        seed: int = 0,
        noise_amplitude: float = 0.0,
        script: Optional[ManeuverScript] = None,
        params: Optional[Dict[SensorKind, Dict[str, Any]]] = None,
        time_scale: float = 1.0,
    ):
        self.session = session
        self.time_scale = time_scale
        self.clock_ms = 0
        self.stopped = False
        self._lock = threading.Lock()
        self._started = time.monotonic()
        self._thread: Optional[threading.Thread] = None
        self.sources: Dict[SensorKind, SensorSource] = {}
        self.writers = {}
        for kind, fs in sorted(sensors, key=lambda pair: pair[0].order):
            config = SourceConfig(
                kind, fs, STREAM_HORIZON_S, seed=seed, noise_amplitude=noise_amplitude, params=(params or {}).get(kind, {})
            )
            source_script = (script or DEFAULT_SCRIPT) if kind is SensorKind.DOF9 else None
            self.sources[kind] = SensorSource(config, source_script, loop_script=True)
            self.writers[kind] = session.open_data_file(kind, fs)

    def now(self, stamp: Optional[int] = None) -> int:
        """Session clock for a command: its stamp if present, else the scaled wall clock."""
        if stamp is None:
            stamp = int((time.monotonic() - self._started) * 1000 * self.time_scale)
        return max(stamp, self.clock_ms)

    def advance_to(self, t_ms: int) -> int:
        """Write every sample with timestamp below `t_ms`; returns the number generated."""
        with self._lock:
            return self._advance_locked(t_ms)

    def pause_at(self, t_ms: int) -> int:
        """
        Write everything before `t_ms` and open a pause interval there, atomically with
        respect to the live loop. Returns the pause start actually recorded.
        """
        with self._lock:
            t_ms = max(t_ms, self.clock_ms)
            self._advance_locked(t_ms)
            self.session.record_pause(t_ms)
            return t_ms

    def resume_at(self, t_ms: int) -> int:
        with self._lock:
            t_ms = max(t_ms, self.clock_ms)
            self._advance_locked(t_ms)
            self.session.end_pause(t_ms)
            return t_ms

    def _advance_locked(self, t_ms: int) -> int:
        if self.stopped or t_ms <= self.clock_ms:
            return 0
        generated = 0
        for kind, source in self.sources.items():
            samples = source.take_until(t_ms)
            append_samples(self.writers[kind], SampleBatch(kind, samples))
            generated += len(samples)
        self.clock_ms = t_ms
        return generated

    def start_live(self) -> None:
        self._thread = threading.Thread(target=self._live_loop, name="sensor-streamer", daemon=True)
        self._thread.start()

    def _live_loop(self) -> None:
        while not self.stopped:
            try:
                self.advance_to(self.now())
            except DriveMonError as e:
                logger.error(f"streaming stopped: {e}", exc_info=True)
                return
            time.sleep(LIVE_TICK_S)

    def stop(self) -> None:
        with self._lock:
            self.stopped = True
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=2)


class _ActiveSession:
    """Per-connection state held by the endpoint while a session runs."""

    def __init__(self, conn: socket.socket, peer: str):
        self.conn = conn
        self.peer = peer
        self.reader = conn.makefile("rb")
        self.writer = conn.makefile("wb")
        self.session: Optional[Session] = None
        self.streamer: Optional[SensorStreamer] = None
        self.manifest: Optional[SessionManifest] = None
        self.dispatcher: Optional[ActionDispatcher] = None


class MonitorEndpoint:
    """
    TCP endpoint serving one driving session at a time.

    On start it registers itself under the game name. For each connection it learns
    the allowed simulator address (pinned, or looked up under the simulator name),
    runs the session state machine and dispatches the resulting actions.
    """

    def __init__(
        self,
        user: str,
        sensors: Sequence[Tuple[SensorKind, SamplingRate]] = DEFAULT_SENSORS,
        store: Optional[SessionStore] = None,
        registry: Optional[HostData] = None,
        host: str = "0.0.0.0",
        port: Optional[int] = None,
        advertise_address: Optional[str] = None,
        allowed_address: Optional[str] = None,
        script: Optional[ManeuverScript] = None,
        seed: int = 0,
        noise_amplitude: float = 0.0,
        params: Optional[Dict[SensorKind, Dict[str, Any]]] = None,
        time_scale: float = 1.0,
        live: bool = False,
        game_name: Optional[str] = None,
        simulator_name: Optional[str] = None,
        clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
        refresh_s: Optional[float] = None,
    ):
        if not sensors:
            raise ProtocolError("the monitor needs at least one sensor")
        self.user = user
        self.sensors = list(sensors)
        self.store = store or SessionStore()
        self.registry = RegistryClient(registry) if registry is not None else None
        self.host = host
        self.port = Config.MONITOR_PORT if port is None else port
        self.advertise_address = advertise_address
        self.pinned_address = allowed_address
        self.script = script
        self.seed = seed
        self.noise_amplitude = noise_amplitude
        self.params = params
        self.time_scale = time_scale
        self.live = live
        self.game_name = game_name or Config.GAME_NAME
        self.simulator_name = simulator_name or Config.SIMULATOR_NAME
        self.clock = clock
        self.refresh_s = Config.REGISTRY_TTL_S / 2 if refresh_s is None else refresh_s
        self.state = SessionState(phase=Phase.CLOSED)
        self.completed: "queue.Queue[SessionManifest]" = queue.Queue()
        self._lock = threading.Lock()
        self._sock: Optional[socket.socket] = None
        self._accept_thread: Optional[threading.Thread] = None
        self._refresh_thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    @property
    def address(self) -> HostData:
        if self.advertise_address:
            return HostData(self.advertise_address, self.port)
        if self.host == "0.0.0.0" and self.registry is not None:
            return HostData(local_address_towards(self.registry.registry.address), self.port)
        return HostData("127.0.0.1" if self.host == "0.0.0.0" else self.host, self.port)

    def start(self) -> "MonitorEndpoint":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.host, self.port))
            sock.listen(4)
        except OSError as e:
            sock.close()
            raise StartupFailure(f"monitor cannot listen on {self.host}:{self.port}: {e}") from e
        self.port = sock.getsockname()[1]
        self._sock = sock
        if self.registry is not None:
            try:
                self.registry.register(self.game_name, self.address)
            except DriveMonError:
                sock.close()
                self._sock = None
                raise
            logger.info(f"registered {self.game_name} as {self.address}")
            self._refresh_thread = threading.Thread(target=self._refresh_loop, name="monitor-refresh", daemon=True)
            self._refresh_thread.start()
        self._accept_thread = threading.Thread(target=self._accept_loop, name="monitor-accept", daemon=True)
        self._accept_thread.start()
        logger.info(f"monitor listening on {self.host}:{self.port} for user {self.user}")
        return self

    def serve_forever(self) -> None:
        if self._sock is None:
            self.start()
        try:
            while not self._stopping.wait(0.5):
                pass
        finally:
            self.stop()

    def wait_for_session(self, timeout: Optional[float] = None) -> SessionManifest:
        """Block until a session has closed and return its final manifest."""
        return self.completed.get(timeout=timeout)

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        for thread in (self._accept_thread, self._refresh_thread):
            if thread is not None:
                thread.join(timeout=2)

    def _refresh_loop(self) -> None:
        # registrations expire after the registry TTL
        while not self._stopping.wait(self.refresh_s):
            try:
                self.registry.register(self.game_name, self.address)
                logger.debug(f"refreshed registration of {self.game_name}")
            except DriveMonError as e:
                logger.warning(f"could not refresh registration of {self.game_name}: {e}")

    def _resolve_allowed_address(self) -> Optional[str]:
        if self.pinned_address:
            return self.pinned_address
        if self.registry is None:
            return None
        try:
            return self.registry.lookup(self.simulator_name).address
        except (NotFound, DiscoveryFailure) as e:
            logger.warning(f"cannot learn the simulator address: {e}")
            return None

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            peer = addr[0]
            with self._lock:
                busy = self.state.phase not in (Phase.LISTENING, Phase.CLOSED)
                if not busy:
                    self.state = SessionState(
                        allowed_address=self._resolve_allowed_address(),
                        sensor_files=tuple(kind.file_name for kind, _ in self.sensors),
                    )
                next_state, actions = monitor_handle(self.state, Connection(peer))
                if Action.START_ALL_SENSORS in actions:
                    self.state = next_state
            if Action.START_ALL_SENSORS not in actions:
                logger.warning(f"rejected connection from {peer} ({'session active' if busy else 'address not allowed'})")
                conn.close()
                continue
            logger.info(f"accepted connection from {peer}")
            threading.Thread(target=self._run_session, args=(conn, peer), name="monitor-session", daemon=True).start()

    def _dispatcher(self, active: _ActiveSession) -> ActionDispatcher:
        def start_all_sensors(t_ms: int):
            active.session = self.store.open_session(self.user, started_at=self.clock())
            active.session.set_allowed_address(active.peer)
            active.streamer = SensorStreamer(
                active.session,
                self.sensors,
                seed=self.seed,
                noise_amplitude=self.noise_amplitude,
                script=self.script,
                params=self.params,
                time_scale=self.time_scale,
            )
            if self.live:
                active.streamer.start_live()
            return active.session.session_id

        def suspend_sampling(t_ms: int):
            t_ms = active.streamer.pause_at(t_ms)
            logger.info(f"sampling paused at {t_ms} ms")
            return t_ms

        def resume_sampling(t_ms: int):
            t_ms = active.streamer.resume_at(t_ms)
            logger.info(f"sampling resumed at {t_ms} ms")
            return t_ms

        def stop_all_sensors(t_ms: int):
            active.streamer.stop()
            logger.info(f"sensors stopped at {t_ms} ms")

        def close_files(t_ms: int):
            active.manifest = active.session.close()
            return active.manifest.file_names()

        def begin_file_send(t_ms: int):
            paths = [active.session.folder / name for name in active.manifest.file_names()]
            sent = send_paths(active.writer, paths, on_event=lambda event: self._apply(active, event, t_ms))
            return sent

        def close_transport(t_ms: int):
            for stream in (active.writer, active.reader):
                try:
                    stream.close()
                except OSError:
                    pass
            active.conn.close()

        return ActionDispatcher(
            {
                Action.START_ALL_SENSORS: start_all_sensors,
                Action.ACKNOWLEDGE_CONNECT: lambda t_ms: logger.info(f"connect acknowledged for {active.peer}"),
                Action.SUSPEND_SAMPLING: suspend_sampling,
                Action.RESUME_SAMPLING: resume_sampling,
                Action.STOP_ALL_SENSORS: stop_all_sensors,
                Action.CLOSE_FILES: close_files,
                Action.BEGIN_FILE_SEND: begin_file_send,
                Action.CLOSE_TRANSPORT: close_transport,
                Action.PROTOCOL_ERROR: lambda t_ms: None,
            }
        )

    def _apply(self, active: _ActiveSession, received, t_ms: int) -> List[Dict[str, Any]]:
        with self._lock:
            self.state, actions = monitor_handle(self.state, received)
        return active.dispatcher.dispatch_all(actions, t_ms=t_ms)

    def _run_session(self, conn: socket.socket, peer: str) -> None:
        conn.settimeout(None)
        active = _ActiveSession(conn, peer)
        active.dispatcher = self._dispatcher(active)
        try:
            results = active.dispatcher.dispatch_all([Action.START_ALL_SENSORS], t_ms=0)
            if results[0]["status"] == "error":
                self._apply(active, TransportClose(), 0)
                return
            while self.state.phase is not Phase.CLOSED:
                try:
                    raw = active.reader.readline(MAX_COMMAND_LINE)
                except OSError:
                    raw = b""
                if not raw:
                    if self.state.phase in (Phase.STREAMING, Phase.PAUSED):
                        active.session.mark_incomplete("transport closed before stopall")
                    self._apply(active, TransportClose(), active.streamer.clock_ms if active.streamer else 0)
                    break
                try:
                    command, stamp = parse_command_line(raw.decode("utf-8", errors="replace"))
                except ProtocolError as e:
                    logger.warning(f"ignored line from {peer}: {e}")
                    continue
                t_ms = active.streamer.now(stamp)
                if self.state.phase in (Phase.STREAMING, Phase.PAUSED):
                    active.streamer.advance_to(t_ms)
                results = self._apply(active, command, t_ms)
                if command is Command.STOPALL and any(r["status"] == "error" for r in results):
                    self._apply(active, TransportClose(), t_ms)
        except DriveMonError as e:
            logger.error(f"session with {peer} failed: {e}", exc_info=True)
            with self._lock:
                self.state = SessionState(phase=Phase.CLOSED)
        finally:
            try:
                conn.close()
            except OSError:
                pass
            if active.session is not None:
                if active.streamer is not None:
                    active.streamer.stop()
                manifest = active.session.close()
                self.completed.put(manifest)
                logger.info(f"session {manifest.session_id} finished ({'complete' if manifest.complete else 'incomplete'})")
