"""
Exception hierarchy shared by every drivemon module.
"""


class DriveMonError(Exception):
    """Base class for all errors raised by drivemon."""


class InvalidArgument(DriveMonError, ValueError):
    pass


class OutOfRange(DriveMonError, ValueError):
    pass


class NotFound(DriveMonError, LookupError):
    pass


class InsufficientData(DriveMonError):
    pass


class DegenerateInput(DriveMonError):
    pass


class UnsupportedRate(DriveMonError):
    pass


class UnsupportedSize(DriveMonError):
    pass


class AlreadyExists(DriveMonError):
    pass


class ParseError(DriveMonError):
    """Malformed data file; `line` is the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FramingError(DriveMonError):
    pass


class IncompleteTransfer(DriveMonError):
    pass


class TransferAborted(DriveMonError):
    """The sender emitted an ERR frame."""

    def __init__(self, reason: str):
        super().__init__(f"transfer aborted by sender: {reason}")
        self.reason = reason


class ProtocolError(DriveMonError):
    pass


class DiscoveryFailure(DriveMonError):
    pass


class StartupFailure(DriveMonError):
    pass


class MissingVariable(DriveMonError):
    """A study variable could not be resolved from a session."""

    def __init__(self, variable: str, session_id: str):
        super().__init__(f"variable '{variable}' missing in session {session_id}")
        self.variable = variable
        self.session_id = session_id
