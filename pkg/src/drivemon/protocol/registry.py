"""
Discovery registry: maps a game name to the host and port of the endpoint serving it.

Wire protocol (one LF-terminated UTF-8 line per request, one reply line):
    REGISTER <name> <ip> <port>   ->  OK
    LOOKUP <name>                 ->  HOST <ip> <port>  |  NOTFOUND
anything else                     ->  ERR <reason>
"""

import ipaddress
import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional

from drivemon.errors import DiscoveryFailure, DriveMonError, InvalidArgument, NotFound, StartupFailure
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

MAX_LINE = 1024


@dataclass(frozen=True)
class HostData:
    address: str
    port: int

    def __post_init__(self):
        try:
            if ipaddress.ip_address(self.address).version != 4:
                raise ValueError
        except ValueError:
            raise InvalidArgument(f"not an IPv4 address: {self.address!r}") from None
        if not 1024 <= int(self.port) <= 65535:
            raise InvalidArgument(f"port must be in [1024, 65535], got {self.port}")

    def __str__(self) -> str:
        return f"{self.address}:{self.port}"


@dataclass(frozen=True)
class RegistryEntry:
    game_name: str
    host: HostData
    registered_at: int


def _validate_name(name: str) -> str:
    if not name or any(c.isspace() for c in name):
        raise InvalidArgument(f"game name must be non-empty without whitespace, got {name!r}")
    return name


class Registry:
    """
    In-memory name store with expiry. All access goes through one lock.

    Args:
        ttl_s (float): Seconds an entry stays visible after its last registration
        clock (Callable[[], float]): Seconds source, monotonic by default
    """

    def __init__(self, ttl_s: Optional[float] = None, clock: Callable[[], float] = time.monotonic):
        self.ttl_s = Config.REGISTRY_TTL_S if ttl_s is None else ttl_s
        self.clock = clock
        self._entries: Dict[str, RegistryEntry] = {}
        self._lock = threading.Lock()

    def register(self, name: str, host: HostData) -> RegistryEntry:
        _validate_name(name)
        entry = RegistryEntry(name, host, int(self.clock() * 1000))
        with self._lock:
            replaced = name in self._entries
            self._entries[name] = entry
        logger.info(f"{'re-registered' if replaced else 'registered'} {name} -> {host}")
        return entry

    def lookup(self, name: str) -> HostData:
        now_ms = int(self.clock() * 1000)
        with self._lock:
            entry = self._entries.get(name)
            if entry is not None and now_ms - entry.registered_at >= self.ttl_s * 1000:
                del self._entries[name]
                logger.info(f"entry {name} expired")
                entry = None
        if entry is None:
            raise NotFound(f"no live registration for {name!r}")
        return entry.host

    def handle_line(self, line: str) -> str:
        """Apply one request line and return the reply line (LF included)."""
        parts = line.strip().split()
        try:
            if len(parts) == 4 and parts[0] == "REGISTER":
                self.register(parts[1], HostData(parts[2], int(parts[3])))
                return "OK\n"
            if len(parts) == 2 and parts[0] == "LOOKUP":
                try:
                    host = self.lookup(parts[1])
                except NotFound:
                    return "NOTFOUND\n"
                return f"HOST {host.address} {host.port}\n"
            return f"ERR malformed request {line.strip()!r}\n"
        except (ValueError, DriveMonError) as e:
            return f"ERR {e}\n"


def registry_register(registry: Registry, name: str, host: HostData) -> RegistryEntry:
    return registry.register(name, host)


def registry_lookup(registry: Registry, name: str) -> HostData:
    return registry.lookup(name)


class RegistryServer:
    """Serves a Registry over TCP, one thread per client connection."""

    def __init__(self, registry: Optional[Registry] = None, host: str = "0.0.0.0", port: Optional[int] = None):
        self.registry = registry or Registry()
        self.host = host
        self.port = Config.REGISTRY_PORT if port is None else port
        self._sock: Optional[socket.socket] = None
        self._thread: Optional[threading.Thread] = None
        self._stopping = threading.Event()

    @property
    def address(self) -> HostData:
        host = "127.0.0.1" if self.host == "0.0.0.0" else self.host
        return HostData(host, self.port)

    def start(self) -> "RegistryServer":
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((self.host, self.port))
            sock.listen(16)
        except OSError as e:
            sock.close()
            raise StartupFailure(f"registry cannot listen on {self.host}:{self.port}: {e}") from e
        self.port = sock.getsockname()[1]
        self._sock = sock
        self._thread = threading.Thread(target=self._accept_loop, name="registry-accept", daemon=True)
        self._thread.start()
        logger.info(f"registry listening on {self.host}:{self.port}")
        return self

    def serve_forever(self) -> None:
        if self._sock is None:
            self.start()
        try:
            while not self._stopping.wait(0.5):
                pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stopping.set()
        if self._sock is not None:
            self._sock.close()
            self._sock = None
        if self._thread is not None:
            self._thread.join(timeout=2)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            threading.Thread(target=self._serve_client, args=(conn, addr), daemon=True).start()

    def _serve_client(self, conn: socket.socket, addr) -> None:
        conn.settimeout(Config.SOCKET_TIMEOUT_S)
        try:
            with conn, conn.makefile("rb") as reader:
                while True:
                    raw = reader.readline(MAX_LINE)
                    if not raw:
                        break
                    reply = self.registry.handle_line(raw.decode("utf-8", errors="replace"))
                    conn.sendall(reply.encode("utf-8"))
        except OSError as e:
            logger.warning(f"registry client {addr[0]} dropped: {e}")


class RegistryClient:
    """Speaks the registry line protocol; every failure to reach the registry is a DiscoveryFailure."""

    def __init__(self, registry: HostData, timeout_s: Optional[float] = None):
        self.registry = registry
        self.timeout_s = Config.SOCKET_TIMEOUT_S if timeout_s is None else timeout_s

    def _request(self, line: str) -> str:
        try:
            with socket.create_connection((self.registry.address, self.registry.port), timeout=self.timeout_s) as sock:
                sock.sendall(line.encode("utf-8"))
                with sock.makefile("rb") as reader:
                    reply = reader.readline(MAX_LINE).decode("utf-8").strip()
        except OSError as e:
            raise DiscoveryFailure(f"registry at {self.registry} unreachable: {e}") from e
        if not reply:
            raise DiscoveryFailure(f"registry at {self.registry} closed without replying")
        return reply

    def register(self, name: str, host: HostData) -> None:
        _validate_name(name)
        reply = self._request(f"REGISTER {name} {host.address} {host.port}\n")
        if reply != "OK":
            raise DiscoveryFailure(f"registration of {name} refused: {reply}")

    def lookup(self, name: str) -> HostData:
        _validate_name(name)
        reply = self._request(f"LOOKUP {name}\n")
        if reply == "NOTFOUND":
            raise NotFound(f"{name} is not registered at {self.registry}")
        parts = reply.split()
        if len(parts) != 3 or parts[0] != "HOST":
            raise DiscoveryFailure(f"unexpected registry reply {reply!r}")
        return HostData(parts[1], int(parts[2]))


def local_address_towards(host: str) -> str:
    """The local IPv4 address used to reach `host` (no packet is sent)."""
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as scratch:
        try:
            scratch.connect((host, 9))
            return scratch.getsockname()[0]
        except OSError:
            return "127.0.0.1"
