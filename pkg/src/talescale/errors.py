"""Exception hierarchy shared by all talescale modules."""


class TalescaleError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(TalescaleError):
    """Input violates a documented invariant or precondition."""


class ChecksumMismatchError(TalescaleError):
    def __init__(self, entry: str, expected: str, actual: str):
        super().__init__(f"checksum mismatch for {entry!r}: expected {expected}, got {actual}")
        self.entry = entry
        self.expected = expected
        self.actual = actual


class FormatVersionError(TalescaleError):
    """Archive declares a format version this code does not understand."""


class MissingFileError(TalescaleError):
    """A manifest entry points at a file that is not in the workspace."""


class UnknownResourceError(TalescaleError):
    pass


class UnknownCredentialError(TalescaleError):
    pass


class UnknownDialectError(TalescaleError):
    pass


class UnknownJobError(TalescaleError):
    pass


class DuplicateError(TalescaleError):
    """An id, path, uri or name is already taken."""


class SessionError(TalescaleError):
    """Session handshake failed or the pair is in backoff."""


class TransportError(TalescaleError):
    """A transport call failed; the operation may be retried later."""


class CapacityError(TalescaleError):
    """Cache cannot admit an entry even after evicting every candidate."""


class RouteNotFoundError(TalescaleError):
    pass


class ProxyPolicyError(TalescaleError):
    """Target resource forbids proxied access (no_proxy policy)."""


class InfeasiblePlanError(TalescaleError):
    def __init__(self, reasons):
        super().__init__("no feasible execution model: " + "; ".join(reasons))
        self.reasons = list(reasons)


class ConfigError(TalescaleError):
    """Simulation config failed to parse or cross-references do not resolve."""
