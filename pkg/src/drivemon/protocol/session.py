"""
Monitor-side session state machine.

`monitor_handle` is a pure transition function: it takes the current state and one
input (a command line, an incoming connection, the end of the file send, or the
transport closing) and returns the next state plus the actions the endpoint must run.
Invalid inputs yield a protocol-error action and leave the state unchanged.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple, Union

from drivemon.errors import ProtocolError

logger = logging.getLogger(__name__)


class Command(str, Enum):
    CONNECT = "connect"
    PAUSE = "pause"
    RESUME = "resume"
    STOPALL = "stopall"
    # server-side transfer events
    FILES_BEGIN = "files-begin"
    FILE_HEADER = "file-header"
    FILE_BYTES = "file-bytes"
    DONE = "done"


WIRE_COMMANDS = (Command.CONNECT, Command.PAUSE, Command.RESUME, Command.STOPALL)
TRANSFER_EVENTS = (Command.FILES_BEGIN, Command.FILE_HEADER, Command.FILE_BYTES)


class Phase(str, Enum):
    LISTENING = "LISTENING"
    STREAMING = "STREAMING"
    PAUSED = "PAUSED"
    TRANSFERRING = "TRANSFERRING"
    CLOSED = "CLOSED"


class Action(str, Enum):
    START_ALL_SENSORS = "StartAllSensors"
    REJECT_CONNECTION = "RejectConnection"
    ACKNOWLEDGE_CONNECT = "AcknowledgeConnect"
    SUSPEND_SAMPLING = "SuspendSampling"
    RESUME_SAMPLING = "ResumeSampling"
    STOP_ALL_SENSORS = "StopAllSensors"
    CLOSE_FILES = "CloseFiles"
    BEGIN_FILE_SEND = "BeginFileSend"
    CLOSE_TRANSPORT = "CloseTransport"
    PROTOCOL_ERROR = "ProtocolError"


@dataclass(frozen=True)
class Connection:
    address: str


@dataclass(frozen=True)
class TransportClose:
    pass


@dataclass(frozen=True)
class SessionState:
    phase: Phase = Phase.LISTENING
    allowed_address: Optional[str] = None
    peer_address: Optional[str] = None
    # files this session records into; open between connection and stopall
    sensor_files: Tuple[str, ...] = ()
    open_files: Tuple[str, ...] = ()
    sensors_stopped: bool = False


Input = Union[Command, Connection, TransportClose]


def parse_command_line(line: str) -> Tuple[Command, Optional[int]]:
    """
    Parse `<token>` or `<token> <t_ms>`.

    Returns:
        Tuple[Command, Optional[int]]: The command and its session-clock stamp, if any
    """
    parts = line.strip().split()
    if not parts or len(parts) > 2:
        raise ProtocolError(f"malformed command line {line.strip()!r}")
    try:
        command = Command(parts[0])
    except ValueError:
        raise ProtocolError(f"unknown command {parts[0]!r}") from None
    if command not in WIRE_COMMANDS:
        raise ProtocolError(f"{command.value} is not a wire command")
    stamp = None
    if len(parts) == 2:
        try:
            stamp = int(parts[1])
        except ValueError:
            raise ProtocolError(f"bad command stamp {parts[1]!r}") from None
        if stamp < 0:
            raise ProtocolError(f"negative command stamp {stamp}")
    return command, stamp


def format_command(command: Command, t_ms: Optional[int] = None) -> str:
    return f"{command.value}\n" if t_ms is None else f"{command.value} {t_ms}\n"


def _protocol_error(state: SessionState, received: Input) -> Tuple[SessionState, List[Action]]:
    logger.warning(f"{received} is invalid in {state.phase.value}")
    return state, [Action.PROTOCOL_ERROR]


def monitor_handle(state: SessionState, received: Input) -> Tuple[SessionState, List[Action]]:
    """
    Advance the session by one input.

    Args:
        state (SessionState): Current state
        received: A Command, a Connection(address) or TransportClose()

    Returns:
        Tuple[SessionState, List[Action]]: Next state and the actions to execute in order
    """
    phase = state.phase

    if isinstance(received, TransportClose):
        if phase in (Phase.STREAMING, Phase.PAUSED):
            return (
                replace(state, phase=Phase.CLOSED, open_files=(), sensors_stopped=True),
                [Action.STOP_ALL_SENSORS, Action.CLOSE_FILES, Action.CLOSE_TRANSPORT],
            )
        if phase is Phase.TRANSFERRING:
            return replace(state, phase=Phase.CLOSED), [Action.CLOSE_TRANSPORT]
        return replace(state, phase=Phase.CLOSED), []

    if isinstance(received, Connection):
        if phase is Phase.LISTENING and state.allowed_address is not None and received.address == state.allowed_address:
            return (
                replace(state, phase=Phase.STREAMING, peer_address=received.address, open_files=state.sensor_files),
                [Action.START_ALL_SENSORS],
            )
        return state, [Action.REJECT_CONNECTION]

    if received is Command.CONNECT and phase is Phase.STREAMING:
        return state, [Action.ACKNOWLEDGE_CONNECT]
    if received is Command.PAUSE and phase is Phase.STREAMING:
        return replace(state, phase=Phase.PAUSED), [Action.SUSPEND_SAMPLING]
    if received is Command.RESUME and phase is Phase.PAUSED:
        return replace(state, phase=Phase.STREAMING), [Action.RESUME_SAMPLING]
    if received is Command.STOPALL and phase in (Phase.STREAMING, Phase.PAUSED):
        return (
            replace(state, phase=Phase.TRANSFERRING, open_files=(), sensors_stopped=True),
            [Action.STOP_ALL_SENSORS, Action.CLOSE_FILES, Action.BEGIN_FILE_SEND],
        )
    if received in TRANSFER_EVENTS and phase is Phase.TRANSFERRING:
        return state, []
    if received is Command.DONE and phase is Phase.TRANSFERRING:
        return replace(state, phase=Phase.CLOSED), [Action.CLOSE_TRANSPORT]
    return _protocol_error(state, received)
