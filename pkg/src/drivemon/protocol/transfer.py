"""
In-band file transfer framing.

    FILE <name> <byte_count>\\n  followed by exactly byte_count raw bytes, per file
    DONE\\n                        end of transfer
    ERR <reason>\\n                sender aborted
"""

import io
import logging
from pathlib import Path
from typing import BinaryIO, Callable, Iterable, List, Optional, Sequence, Tuple, Union

from drivemon.errors import FramingError, IncompleteTransfer, InvalidArgument, TransferAborted
from drivemon.protocol.session import Command

logger = logging.getLogger(__name__)

MAX_HEADER = 4096
CHUNK = 65536


def _check_name(name: str) -> str:
    if not name or any(c.isspace() for c in name) or "/" in name or "\\" in name or name in (".", ".."):
        raise InvalidArgument(f"file name {name!r} cannot be framed")
    return name


def _header(name: str, size: int) -> bytes:
    return f"FILE {_check_name(name)} {size}\n".encode("utf-8")


def send_files(files: Iterable[Tuple[str, bytes]]) -> bytes:
    """Frame in-memory files, in the given order, into one byte string."""
    out = io.BytesIO()
    for name, data in files:
        out.write(_header(name, len(data)))
        out.write(data)
    out.write(b"DONE\n")
    return out.getvalue()


def send_paths(
    out: BinaryIO, paths: Sequence[Union[str, Path]], on_event: Optional[Callable[[Command], None]] = None
) -> int:
    """
    Stream files from disk in order. An unreadable file aborts the transfer with an
    ERR frame and raises TransferAborted.

    Args:
        out: Writable binary stream (socket file or buffer)
        paths: Files to send, in manifest order
        on_event: Called with FILES_BEGIN, FILE_HEADER, FILE_BYTES and DONE as they happen

    Returns:
        int: Payload bytes sent
    """
    notify = on_event or (lambda _: None)
    total = 0
    notify(Command.FILES_BEGIN)
    for raw in paths:
        path = Path(raw)
        try:
            size = path.stat().st_size
            with open(path, "rb") as f:
                out.write(_header(path.name, size))
                notify(Command.FILE_HEADER)
                remaining = size
                while remaining:
                    chunk = f.read(min(CHUNK, remaining))
                    if not chunk:
                        raise OSError(f"{path.name} shrank while sending")
                    out.write(chunk)
                    remaining -= len(chunk)
                notify(Command.FILE_BYTES)
        except OSError as e:
            reason = f"{path.name} unreadable: {e}".replace("\n", " ")
            logger.error(f"aborting transfer: {reason}", exc_info=True)
            out.write(f"ERR {reason}\n".encode("utf-8"))
            out.flush()
            raise TransferAborted(reason) from e
        total += size
        logger.info(f"sent {path.name} ({size} bytes)")
    out.write(b"DONE\n")
    out.flush()
    notify(Command.DONE)
    return total


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    parts = []
    remaining = count
    while remaining:
        chunk = stream.read(min(CHUNK, remaining))
        if not chunk:
            break
        parts.append(chunk)
        remaining -= len(chunk)
    return b"".join(parts)


def receive_files(stream: Union[BinaryIO, bytes]) -> List[Tuple[str, bytes]]:
    """
    Inverse of send_files.

    Raises:
        FramingError: Malformed header or a file shorter than declared
        IncompleteTransfer: Stream ended without DONE
        TransferAborted: Sender emitted ERR
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    files: List[Tuple[str, bytes]] = []
    while True:
        line = stream.readline(MAX_HEADER)
        if not line:
            raise IncompleteTransfer(f"stream ended after {len(files)} files without DONE")
        if not line.endswith(b"\n"):
            raise FramingError(f"unterminated frame header {line[:64]!r}")
        text = line[:-1].decode("utf-8", errors="replace")
        if text == "DONE":
            return files
        if text.startswith("ERR "):
            raise TransferAborted(text[4:])
        parts = text.split(" ")
        if len(parts) != 3 or parts[0] != "FILE" or not (parts[2].isascii() and parts[2].isdigit()):
            raise FramingError(f"malformed frame header {text[:64]!r}")
        name, size = parts[1], int(parts[2])
        try:
            _check_name(name)
        except InvalidArgument as e:
            raise FramingError(str(e)) from e
        data = _read_exact(stream, size)
        if len(data) != size:
            raise FramingError(f"{name} declares {size} bytes, stream ended after {len(data)}")
        files.append((name, data))
        logger.debug(f"received {name} ({size} bytes)")
