"""Transport layer: sessions, calls, and the transport log.

Secure-connection setup is expensive, so operations aggregate under
sessions that stay alive between calls: at most one live session per
(resource, credential) pair, re-handshaking only after the idle TTL
lapses. Every completed call appends one log line::

    time | resource | credential | verb | payload-digest

which acceptance tests treat as ground truth for query and handshake
counters. Synchronous costs (handshake, round trip) advance the clock
when called from driver context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .digest import short_digest
from .errors import SessionError, TransportError, UnknownCredentialError, UnknownResourceError


@dataclass
class Session:
    resource: str
    credential: str
    opened_at: float
    idle_ttl: float
    live: bool = True
    last_used: float = 0.0


@dataclass(frozen=True)
class TransportCall:
    t: float
    resource: str
    credential: str
    verb: str
    payload_digest: str
    payload: str = field(repr=False)

    def log_line(self) -> str:
        return f"{self.t:.3f} | {self.resource} | {self.credential} | {self.verb} | {self.payload_digest}"


class Transport:
    def __init__(self, clock, trace=None, rtt_s: float = 0.05, handshake_s: float = 0.5,
                 idle_ttl_s: float | None = 300.0, handshake_backoff_s: float = 30.0):
        self.clock = clock
        self.trace = trace
        self.rtt_s = rtt_s
        self.handshake_s = handshake_s
        self.idle_ttl_s = math.inf if idle_ttl_s is None else idle_ttl_s
        self.handshake_backoff_s = handshake_backoff_s
        self.handshake_count = 0
        self.log: list[TransportCall] = []
        self._backends: dict[str, object] = {}
        self._credentials: set[str] = set()
        self._sessions: dict[tuple[str, str], Session] = {}
        self._unhealthy: dict[tuple[str, str], float] = {}
        self._fail_next: list[str] = []  # pending injected failures: "transport" | "handshake"

    # -- registry ---------------------------------------------------------

    def register_backend(self, resource_name: str, backend) -> None:
        self._backends[resource_name] = backend

    def register_credential(self, name: str) -> None:
        self._credentials.add(name)

    def has_credential(self, name: str) -> bool:
        return name in self._credentials

    # -- fault injection ----------------------------------------------------

    def inject_failure(self, kind: str = "transport", count: int = 1) -> None:
        if kind not in ("transport", "handshake"):
            raise ValueError(f"unknown failure kind {kind!r}")
        self._fail_next.extend([kind] * count)

    def _take_failure(self, kind: str) -> bool:
        if self._fail_next and self._fail_next[0] == kind:
            self._fail_next.pop(0)
            return True
        return False

    # -- sessions ---------------------------------------------------------

    def acquire_session(self, resource: str, credential: str) -> Session:
        """Return the live session for the pair, handshaking only if needed."""
        if credential not in self._credentials:
            raise UnknownCredentialError(f"credential {credential!r} is not registered")
        if resource not in self._backends:
            raise UnknownResourceError(f"no transport route to resource {resource!r}")
        pair = (resource, credential)
        until = self._unhealthy.get(pair)
        if until is not None:
            if self.clock.now < until:
                raise SessionError(f"{pair} is in handshake backoff until t={until}")
            del self._unhealthy[pair]

        session = self._sessions.get(pair)
        if session is not None and session.live:
            if self.clock.now - session.last_used <= self.idle_ttl_s:
                session.last_used = self.clock.now
                return session
            session.live = False

        if self._take_failure("handshake"):
            self._unhealthy[pair] = self.clock.now + self.handshake_backoff_s
            if self.trace is not None:
                self.trace.emit("handshake_failed", resource=resource, credential=credential)
            raise SessionError(f"handshake with {pair} failed")

        self.clock.consume(self.handshake_s)
        self.handshake_count += 1
        session = Session(
            resource=resource, credential=credential,
            opened_at=self.clock.now, idle_ttl=self.idle_ttl_s, last_used=self.clock.now,
        )
        self._sessions[pair] = session
        if self.trace is not None:
            self.trace.emit("handshake", resource=resource, credential=credential)
        return session

    def live_sessions(self) -> int:
        return sum(1 for s in self._sessions.values() if s.live)

    # -- calls --------------------------------------------------------------

    def call(self, resource: str, credential: str, verb: str, payload: str) -> str:
        """One round trip over the pair's session; logs exactly one line."""
        session = self.acquire_session(resource, credential)
        if self._take_failure("transport"):
            if self.trace is not None:
                self.trace.emit("transport_failed", resource=resource,
                                credential=credential, verb=verb)
            raise TransportError(f"{verb} to {resource!r} failed in transit")
        self.clock.consume(self.rtt_s)
        backend = self._backends[resource]
        output = backend.execute(payload)
        session.last_used = self.clock.now
        record = TransportCall(
            t=self.clock.now, resource=resource, credential=credential,
            verb=verb, payload_digest=short_digest(payload.encode()), payload=payload,
        )
        self.log.append(record)
        if self.trace is not None:
            self.trace.emit("transport_call", resource=resource, credential=credential,
                            verb=verb, payload_digest=record.payload_digest)
        return output

    # -- log queries --------------------------------------------------------

    def calls(self, resource: str | None = None, verb: str | None = None) -> list[TransportCall]:
        out = self.log
        if resource is not None:
            out = [c for c in out if c.resource == resource]
        if verb is not None:
            out = [c for c in out if c.verb == verb]
        return list(out)

    def query_count(self, resource: str | None = None) -> int:
        return len(self.calls(resource=resource, verb="batch_status"))

    def log_text(self) -> str:
        return "\n".join(c.log_line() for c in self.log) + ("\n" if self.log else "")
