"""Exception hierarchy shared by the codec, protocol, loader, and machine model."""


class EdapError(Exception):
    """Base class for all model errors."""


class AlignmentError(EdapError):
    """An effective address or section length violates 128-byte alignment."""


class IntegrityError(EdapError):
    """Digest verification failed: tampering, relocation, wrong key, or wrong session."""


class BlockUnmappedError(IntegrityError):
    """A fetch addressed a block that is not (or no longer) mapped."""


class DecryptFailure(EdapError):
    """A wrapped key could not be unwrapped: wrong processor or corrupted blob."""


class ReplayError(EdapError):
    """A stream frame repeated a sequence number or effective address."""


class AuthError(EdapError):
    """Transport authentication of a stream frame failed."""


class FreshnessError(EdapError):
    """A (key pair, session id) combination was reused for packaging."""


class AccessDenied(EdapError):
    """A requester is not entitled to the cleartext it asked for."""


class BindingError(EdapError):
    """A code block was presented at the wrong address or under the wrong thread."""


class StateHashMismatch(EdapError):
    """Register state at resume does not match the hash recorded at suspension."""


class TraceFormatError(EdapError):
    """A trace file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PlacementOrderingError(EdapError):
    """A placement comparison violated the expected cost ordering."""
