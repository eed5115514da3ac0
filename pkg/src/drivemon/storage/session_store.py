"""
Session persistence.

Layout: `<data_dir>/<user>/<session>/` holding one CSV per sensor, the vehicle and
offence logs, and `manifest.json`. Data files start with a `#` header line and a
column-name line, then one `t_ms,<ch0>[,<ch1>...]` row per sample.
"""

import logging
import os
import re
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

from pydantic import BaseModel, Field

from drivemon.core.meta import SessionMeta
from drivemon.core.signal import Sample, SampleBatch, SamplingRate, SensorKind
from drivemon.errors import AlreadyExists, InvalidArgument, NotFound, ParseError
from drivemon.utils.config import Config

logger = logging.getLogger(__name__)

FORMAT_VERSION = "v1"
MANIFEST_NAME = "manifest.json"
USER_ID_PATTERN = re.compile(r"[A-Za-z0-9_-]{1,64}")
FILE_NAME_PATTERN = re.compile(r"[A-Za-z0-9_.-]{1,128}")


def file_checksum(path: Union[str, Path]) -> str:
    """CRC-32 of a file as 8 lowercase hex digits."""
    crc = 0
    with open(path, "rb") as f:
        # read large files in chunks
        for block in iter(lambda: f.read(65536), b""):
            crc = zlib.crc32(block, crc)
    return f"{crc & 0xFFFFFFFF:08x}"


def validate_file_name(name: str) -> str:
    if not FILE_NAME_PATTERN.fullmatch(name) or name in (".", ".."):
        raise InvalidArgument(f"unsafe file name {name!r}")
    return name


@dataclass(frozen=True)
class DataFileHeader:
    sensor: SensorKind
    fs_hz: float
    user: str
    session: str
    started_at: str
    format_version: str = FORMAT_VERSION

    def to_line(self) -> str:
        return (
            f"# format={self.format_version} sensor={self.sensor.value} fs_hz={self.fs_hz!r} "
            f"user={self.user} session={self.session} started_at={self.started_at}"
        )

    @property
    def columns(self) -> str:
        return ",".join(("t_ms",) + self.sensor.channel_names)

    @classmethod
    def parse(cls, line: str) -> "DataFileHeader":
        if not line.startswith("# "):
            raise ParseError("data file must start with a '# ' header line", 1)
        fields = {}
        for token in line[2:].split():
            key, sep, value = token.partition("=")
            if not sep:
                raise ParseError(f"malformed header field {token!r}", 1)
            fields[key] = value
        missing = {"format", "sensor", "fs_hz", "user", "session", "started_at"} - fields.keys()
        if missing:
            raise ParseError(f"header is missing {', '.join(sorted(missing))}", 1)
        if fields["format"] != FORMAT_VERSION:
            raise ParseError(f"unsupported format {fields['format']!r}", 1)
        try:
            return cls(
                sensor=SensorKind.parse(fields["sensor"]),
                fs_hz=float(fields["fs_hz"]),
                user=fields["user"],
                session=fields["session"],
                started_at=fields["started_at"],
            )
        except ValueError as e:
            raise ParseError(str(e), 1) from e


class FileEntry(BaseModel):
    name: str
    bytes: int = Field(ge=0)
    crc32: str = Field(pattern=r"^[0-9a-f]{8}$")


class PauseInterval(BaseModel):
    start_ms: int = Field(ge=0)
    end_ms: Optional[int] = None

    def contains(self, t_ms: int) -> bool:
        return t_ms >= self.start_ms and (self.end_ms is None or t_ms < self.end_ms)


class SessionManifest(BaseModel):
    format_version: str = FORMAT_VERSION
    session_id: str
    user_id: str
    started_at: str
    role: str = "monitor"
    allowed_address: Optional[str] = None
    sensors: Dict[str, float] = Field(default_factory=dict)
    files: List[FileEntry] = Field(default_factory=list)
    meta: Optional[SessionMeta] = None
    pause_intervals: List[PauseInterval] = Field(default_factory=list)
    final: bool = False
    complete: bool = True
    notes: List[str] = Field(default_factory=list)

    def file_names(self) -> List[str]:
        return [entry.name for entry in self.files]


class DataFileWriter:
    """One open sensor file. Single writer."""

    def __init__(self, session: "Session", header: DataFileHeader):
        self.session = session
        self.header = header
        self.path = session.folder / header.sensor.file_name
        self.rows = 0
        self.skipped = 0
        self.last_t: Optional[int] = None
        self._file = open(self.path, "w", encoding="utf-8", newline="\n")
        self._file.write(header.to_line() + "\n")
        self._file.write(header.columns + "\n")

    @property
    def closed(self) -> bool:
        return self._file.closed

    def close(self) -> None:
        if not self._file.closed:
            self._file.flush()
            os.fsync(self._file.fileno())
            self._file.close()
            logger.debug(f"closed {self.path.name}: {self.rows} rows, {self.skipped} skipped in pauses")


def append_samples(file: DataFileWriter, batch: SampleBatch) -> None:
    """
    Append one CSV row per sample. Samples inside a recorded pause interval are not
    written; rows must arrive in timestamp order.
    """
    if file.closed:
        raise InvalidArgument(f"{file.path.name} is closed")
    if batch.kind is not file.header.sensor:
        raise InvalidArgument(f"cannot append {batch.kind.value} samples to a {file.header.sensor.value} file")
    lines = []
    last_t = file.last_t
    for sample in batch.samples:
        if file.session.in_pause(sample.t):
            file.skipped += 1
            continue
        if last_t is not None and sample.t < last_t:
            raise InvalidArgument(f"sample at t={sample.t} arrives after t={last_t}")
        last_t = sample.t
        lines.append(f"{sample.t}," + ",".join(repr(float(v)) for v in sample.channels) + "\n")
    file._file.write("".join(lines))
    file.rows += len(lines)
    file.last_t = last_t


class Session:
    """An open session folder and its manifest. Manifest mutations are serialized."""

    def __init__(self, folder: Path, manifest: SessionManifest):
        self.folder = folder
        self.manifest = manifest
        self._writers: Dict[SensorKind, DataFileWriter] = {}
        self._extra_files: List[str] = []
        self._lock = threading.Lock()
        self._closed = False

    @property
    def session_id(self) -> str:
        return self.manifest.session_id

    @property
    def closed(self) -> bool:
        return self._closed

    def open_data_file(self, kind: SensorKind, fs: SamplingRate) -> DataFileWriter:
        with self._lock:
            if kind in self._writers:
                raise AlreadyExists(f"{kind.file_name} is already open in session {self.session_id}")
            header = DataFileHeader(kind, fs.hertz, self.manifest.user_id, self.session_id, self.manifest.started_at)
            writer = DataFileWriter(self, header)
            self._writers[kind] = writer
            self.manifest.sensors[kind.value] = fs.hertz
            return writer

    def writer(self, kind: SensorKind) -> DataFileWriter:
        try:
            return self._writers[kind]
        except KeyError:
            raise NotFound(f"no {kind.value} file in session {self.session_id}") from None

    def write_file(self, name: str, data: bytes) -> Path:
        """Store a non-sensor file (vehicle log, received transfer) and list it in the manifest."""
        path = self.folder / validate_file_name(name)
        with self._lock:
            if name in self._extra_files or name == MANIFEST_NAME:
                raise AlreadyExists(f"{name} already exists in session {self.session_id}")
            path.write_bytes(data)
            self._extra_files.append(name)
        return path

    def set_allowed_address(self, address: str) -> None:
        with self._lock:
            self.manifest.allowed_address = address
            self._save()

    def record_pause(self, start_ms: int) -> None:
        with self._lock:
            self.manifest.pause_intervals.append(PauseInterval(start_ms=start_ms))
            self._save()

    def end_pause(self, end_ms: int) -> None:
        with self._lock:
            if not self.manifest.pause_intervals or self.manifest.pause_intervals[-1].end_ms is not None:
                raise InvalidArgument("no open pause interval to end")
            self.manifest.pause_intervals[-1].end_ms = end_ms
            self._save()

    def in_pause(self, t_ms: int) -> bool:
        return any(p.contains(t_ms) for p in self.manifest.pause_intervals)

    def add_note(self, note: str) -> None:
        with self._lock:
            self.manifest.notes.append(note)

    def mark_incomplete(self, reason: str) -> None:
        with self._lock:
            self.manifest.complete = False
            self.manifest.notes.append(reason)

    def close(self) -> SessionManifest:
        """Flush and close every file, record sizes and checksums, mark the manifest final."""
        with self._lock:
            if self._closed:
                return self.manifest
            for writer in self._writers.values():
                writer.close()
            names = [kind.file_name for kind in sorted(self._writers, key=lambda k: k.order)] + self._extra_files
            self.manifest.files = [
                FileEntry(name=n, bytes=(self.folder / n).stat().st_size, crc32=file_checksum(self.folder / n))
                for n in names
            ]
            self.manifest.final = True
            self._save()
            self._closed = True
        logger.info(f"closed session {self.session_id} with {len(self.manifest.files)} files")
        return self.manifest

    def _save(self) -> None:
        (self.folder / MANIFEST_NAME).write_text(self.manifest.model_dump_json(indent=2), encoding="utf-8")


def _utc_iso(moment: datetime) -> str:
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.") + f"{moment.microsecond // 1000:03d}Z"


def _session_id_for(moment: datetime, prefix: str = "s") -> str:
    moment = moment.astimezone(timezone.utc)
    return f"{prefix}-{moment:%Y%m%dT%H%M%S}{moment.microsecond // 1000:03d}Z"


class SessionStore:
    def __init__(self, data_dir: Union[str, Path, None] = None):
        self.data_dir = Path(data_dir or Config.DATA_DIR)

    def open_session(
        self,
        user: str,
        meta: Optional[SessionMeta] = None,
        session_id: Optional[str] = None,
        started_at: Optional[datetime] = None,
        role: str = "monitor",
    ) -> Session:
        """
        Create `<data_dir>/<user>/<session>/` and its initial manifest.

        Args:
            user (str): User id, `[A-Za-z0-9_-]{1,64}`
            meta (SessionMeta): Participant description, stored in the manifest
            session_id (str): Forced id; defaults to `s-<UTC timestamp>` (`m-` for monitor sessions)
            started_at (datetime): Session start; defaults to now

        Returns:
            Session: The open session
        """
        if not USER_ID_PATTERN.fullmatch(user or ""):
            raise InvalidArgument(f"invalid user id {user!r}")
        started_at = started_at or datetime.now(timezone.utc)
        session_id = session_id or _session_id_for(started_at, "m" if role == "monitor" else "s")
        if not USER_ID_PATTERN.fullmatch(session_id):
            raise InvalidArgument(f"invalid session id {session_id!r}")
        folder = self.data_dir / user / session_id
        try:
            folder.mkdir(parents=True, exist_ok=False)
        except FileExistsError:
            raise AlreadyExists(f"session {user}/{session_id} already exists") from None
        manifest = SessionManifest(
            session_id=session_id, user_id=user, started_at=_utc_iso(started_at), meta=meta, role=role
        )
        session = Session(folder, manifest)
        session._save()
        logger.info(f"opened session {user}/{session_id} at {folder}")
        return session

    def list_sessions(self, user: Optional[str] = None) -> List[Path]:
        """Session folders (those holding a manifest), sorted."""
        root = self.data_dir / user if user else self.data_dir
        found = []
        for dirpath, _, files in os.walk(root):
            if MANIFEST_NAME in files:
                found.append(Path(dirpath))
        return sorted(found)


def close_session(session: Session) -> SessionManifest:
    return session.close()


def load_manifest(folder: Union[str, Path]) -> SessionManifest:
    path = Path(folder) / MANIFEST_NAME
    if not path.exists():
        raise NotFound(f"no manifest in {folder}")
    return SessionManifest.model_validate_json(path.read_text(encoding="utf-8"))


def verify_session(folder: Union[str, Path]) -> List[str]:
    """Compare every manifest entry against the files on disk; returns the problems found."""
    folder = Path(folder)
    manifest = load_manifest(folder)
    problems = []
    for entry in manifest.files:
        path = folder / entry.name
        if not path.exists():
            problems.append(f"{entry.name}: missing")
            continue
        size = path.stat().st_size
        if size != entry.bytes:
            problems.append(f"{entry.name}: {size} bytes, manifest says {entry.bytes}")
        elif file_checksum(path) != entry.crc32:
            problems.append(f"{entry.name}: checksum mismatch")
    return problems


def read_data_file(path: Union[str, Path]) -> Tuple[DataFileHeader, List[Sample]]:
    """Parse a sensor data file back into its header and samples."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty data file", 1)
    header = DataFileHeader.parse(lines[0])
    if len(lines) < 2 or lines[1] != header.columns:
        raise ParseError(f"expected column line {header.columns!r}", 2)
    width = header.sensor.channel_count + 1
    samples = []
    for number, line in enumerate(lines[2:], start=3):
        fields = line.split(",")
        if len(fields) != width:
            raise ParseError(f"expected {width} fields, got {len(fields)}", number)
        try:
            samples.append(Sample(int(fields[0]), tuple(float(v) for v in fields[1:])))
        except ValueError as e:
            raise ParseError(str(e), number) from e
    return header, samples


def read_stream(folder: Union[str, Path], kind: SensorKind) -> Tuple[Optional[DataFileHeader], List[Sample]]:
    """Samples of one sensor in a session folder; (None, []) when the sensor was not recorded."""
    path = Path(folder) / kind.file_name
    if not path.exists():
        return None, []
    return read_data_file(path)


def write_stream(session: Session, kind: SensorKind, fs: SamplingRate, samples: Iterable[Sample]) -> DataFileWriter:
    """Open, fill and close one data file."""
    writer = session.open_data_file(kind, fs)
    append_samples(writer, SampleBatch(kind, list(samples)))
    writer.close()
    return writer
