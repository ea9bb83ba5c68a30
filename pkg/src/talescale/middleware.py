"""Asynchronous job-submission middleware over pluggable LRM dialects.

Design constraints, each of which is load-bearing for scale:

* submit returns as soon as the remote side acknowledges the request —
  never when the job starts — so client latency is independent of queue
  wait;
* status answers from the local state cache and never touches the
  backend;
* a single per-resource poller issues ONE aggregated status query per
  cycle covering every non-terminal job, however many there are, and only
  while there is something to poll (no per-job control flows);
* sessions are reused across operations per (resource, credential) pair.

Client job states move only along the legal edges
Created -> Submitted -> Queued -> Running -> {Completed, Failed, Canceled},
plus Queued -> Canceled and Submitted -> Failed; a poll that observes a
later backend state replays the intermediate transitions in order.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .dialects import DialectRegistry, default_registry
from .errors import (
    SessionError,
    TransportError,
    UnknownJobError,
    UnknownResourceError,
    ValidationError,
)
from .resources import ResourceDescriptor


class JobState(str, enum.Enum):
    CREATED = "Created"
    SUBMITTED = "Submitted"
    QUEUED = "Queued"
    RUNNING = "Running"
    COMPLETED = "Completed"
    FAILED = "Failed"
    CANCELED = "Canceled"


TERMINAL_STATES = frozenset({JobState.COMPLETED, JobState.FAILED, JobState.CANCELED})

LEGAL_TRANSITIONS: dict[JobState, frozenset[JobState]] = {
    JobState.CREATED: frozenset({JobState.SUBMITTED}),
    JobState.SUBMITTED: frozenset({JobState.QUEUED, JobState.FAILED}),
    JobState.QUEUED: frozenset({JobState.RUNNING, JobState.CANCELED}),
    JobState.RUNNING: frozenset({JobState.COMPLETED, JobState.FAILED, JobState.CANCELED}),
    JobState.COMPLETED: frozenset(),
    JobState.FAILED: frozenset(),
    JobState.CANCELED: frozenset(),
}

_BACKEND_TO_CLIENT = {
    "queued": JobState.QUEUED,
    "running": JobState.RUNNING,
    "completed": JobState.COMPLETED,
    "failed": JobState.FAILED,
    "canceled": JobState.CANCELED,
}


@dataclass(frozen=True)
class JobSpec:
    resource: str
    command: tuple[str, ...]
    credential: str = "user"
    tale_id: str | None = None
    node_count: int = 1
    mpi: bool = False
    env: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))
        if isinstance(self.env, dict):
            object.__setattr__(self, "env", tuple(sorted(self.env.items())))
        if self.node_count < 1:
            raise ValidationError("node_count must be >= 1")


@dataclass(frozen=True)
class JobHandle:
    job_id: str
    resource: str
    submitted_at: float


@dataclass(frozen=True)
class JobStatus:
    state: JobState
    exit_code: int | None
    transitions: tuple[tuple[JobState, float], ...]
    cause: str | None = None

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES


@dataclass(frozen=True)
class CancelAck:
    job_id: str
    noop: bool


class Subscription:
    """Ordered, exactly-once stream of one job's state transitions."""

    def __init__(self, job_id: str):
        self.job_id = job_id
        self._queue: deque[tuple[JobState, float]] = deque()
        self.closed = False

    def _push(self, state: JobState, t: float) -> None:
        if not self.closed:
            self._queue.append((state, t))
            if state in TERMINAL_STATES:
                self.closed = True

    def drain(self) -> list[tuple[JobState, float]]:
        out = list(self._queue)
        self._queue.clear()
        return out


@dataclass
class _JobRecord:
    job_id: str
    spec: JobSpec
    state: JobState = JobState.CREATED
    exit_code: int | None = None
    cause: str | None = None
    native_id: str | None = None
    transitions: list[tuple[JobState, float]] = field(default_factory=list)
    subscribers: list[Subscription] = field(default_factory=list)


class LrmMiddleware:
    def __init__(self, clock, transport, trace=None,
                 dialects: DialectRegistry | None = None,
                 poll_interval_s: float = 5.0,
                 on_transition: Callable | None = None):
        if poll_interval_s <= 0:
            raise ValidationError("poll interval must be > 0")
        self.clock = clock
        self.transport = transport
        self.trace = trace
        self.dialects = dialects if dialects is not None else default_registry()
        self.poll_interval_s = poll_interval_s
        self.on_transition = on_transition
        self.poll_failures = 0
        self.resources: dict[str, ResourceDescriptor] = {}
        self._records: dict[str, _JobRecord] = {}
        self._active: dict[str, set[str]] = {}  # resource -> non-terminal job ids
        self._pollers: dict[str, object] = {}   # resource -> scheduled EventHandle
        self._counter = 0

    # -- registry -----------------------------------------------------------

    def register_resource(self, resource: ResourceDescriptor) -> None:
        self.resources[resource.name] = resource
        self._active.setdefault(resource.name, set())

    def register_dialect(self, name: str, adapter) -> None:
        self.dialects.register(name, adapter)

    def register_credential(self, name: str) -> None:
        self.transport.register_credential(name)

    def acquire_session(self, resource: str, credential: str):
        return self.transport.acquire_session(resource, credential)

    @property
    def active_pollers(self) -> int:
        return len(self._pollers)

    def jobs_on(self, resource: str) -> list[str]:
        return sorted(self._active.get(resource, ()))

    # -- lifecycle ------------------------------------------------------------

    def submit(self, spec: JobSpec) -> JobHandle:
        """Submit a job; returns after one acknowledged transport round trip."""
        resource = self.resources.get(spec.resource)
        if resource is None:
            raise UnknownResourceError(f"unknown resource {spec.resource!r}")
        if resource.lrm != "batch":
            raise ValidationError(f"resource {spec.resource!r} has no batch LRM")
        if spec.mpi and not resource.mpi_capable:
            raise ValidationError(f"resource {spec.resource!r} is not MPI capable")
        if spec.node_count > resource.node_count:
            raise ValidationError(
                f"job wants {spec.node_count} nodes, {spec.resource!r} has {resource.node_count}"
            )
        adapter = self.dialects.get(resource.dialect)

        self._counter += 1
        job_id = f"j{self._counter:06d}"
        record = _JobRecord(job_id=job_id, spec=spec)
        record.transitions.append((JobState.CREATED, self.clock.now))
        self._records[job_id] = record

        command = adapter.format_submit(list(spec.command), spec.node_count, job_id)
        try:
            output = self.transport.call(spec.resource, spec.credential, "submit", command)
        except (TransportError, SessionError) as exc:
            self._apply(record, JobState.SUBMITTED)
            self._apply(record, JobState.FAILED, cause=str(exc))
        else:
            record.native_id = adapter.parse_submit(output)
            self._apply(record, JobState.SUBMITTED)
            self._active[spec.resource].add(job_id)
            self._ensure_poller(spec.resource)
        handle = JobHandle(job_id=job_id, resource=spec.resource, submitted_at=self.clock.now)
        if self.trace is not None:
            self.trace.emit("job_submitted", job_id=job_id, resource=spec.resource,
                            credential=spec.credential, tale_id=spec.tale_id)
        return handle

    def status(self, handle: JobHandle | str) -> JobStatus:
        """Answered purely from the local cache; never queries the backend."""
        record = self._record(handle)
        return JobStatus(
            state=record.state, exit_code=record.exit_code,
            transitions=tuple(record.transitions), cause=record.cause,
        )

    def subscribe(self, handle: JobHandle | str) -> Subscription:
        record = self._record(handle)
        sub = Subscription(record.job_id)
        if record.state in TERMINAL_STATES:
            sub._push(record.state, record.transitions[-1][1])
        else:
            record.subscribers.append(sub)
        return sub

    def cancel(self, handle: JobHandle | str) -> CancelAck:
        """Idempotent: terminal jobs acknowledge without a transport call."""
        record = self._record(handle)
        if record.state in TERMINAL_STATES:
            return CancelAck(job_id=record.job_id, noop=True)
        resource = self.resources[record.spec.resource]
        adapter = self.dialects.get(resource.dialect)
        self.transport.call(
            record.spec.resource, record.spec.credential, "cancel",
            adapter.format_cancel(record.native_id),
        )
        # State flips to Canceled at the next poll confirmation.
        return CancelAck(job_id=record.job_id, noop=False)

    # -- polling ------------------------------------------------------------

    def poll_cycle(self, resource_name: str) -> list[tuple[str, JobState, JobState]]:
        """One aggregated backend query covering all non-terminal jobs.

        Transport failure leaves every job untouched; the next cycle
        retries (at-least-once status semantics).
        """
        active = [
            self._records[job_id] for job_id in sorted(self._active.get(resource_name, ()))
            if self._records[job_id].native_id is not None
        ]
        if not active:
            return []
        resource = self.resources[resource_name]
        adapter = self.dialects.get(resource.dialect)
        credential = min(r.spec.credential for r in active)
        command = adapter.format_status([r.native_id for r in active])
        try:
            output = self.transport.call(resource_name, credential, "batch_status", command)
        except (TransportError, SessionError) as exc:
            self.poll_failures += 1
            if self.trace is not None:
                self.trace.emit("poll_failed", resource=resource_name, reason=str(exc))
            return []
        observed = adapter.parse_status(output)
        applied: list[tuple[str, JobState, JobState]] = []
        for record in active:
            state_code = observed.get(record.native_id)
            if state_code is None:
                continue
            target = _BACKEND_TO_CLIENT[state_code[0]]
            before = record.state
            self._advance_to(record, target, exit_code=state_code[1])
            if record.state != before:
                applied.append((record.job_id, before, record.state))
        return applied

    def _ensure_poller(self, resource_name: str) -> None:
        if resource_name in self._pollers or not self._active.get(resource_name):
            return
        interval = self.poll_interval_s
        # Grid-aligned ticks: cycle boundaries land on multiples of the
        # interval regardless of when the first job arrived.
        next_tick = math.floor(self.clock.now / interval) * interval + interval
        self._pollers[resource_name] = self.clock.at(
            next_tick, lambda: self._poll_tick(resource_name)
        )

    def _poll_tick(self, resource_name: str) -> None:
        self._pollers.pop(resource_name, None)
        self.poll_cycle(resource_name)
        if self._active.get(resource_name):
            self._ensure_poller(resource_name)

    # -- state machine ---------------------------------------------------------

    def _record(self, handle: JobHandle | str) -> _JobRecord:
        job_id = handle.job_id if isinstance(handle, JobHandle) else handle
        record = self._records.get(job_id)
        if record is None:
            raise UnknownJobError(f"unknown job {job_id!r}")
        return record

    def _advance_to(self, record: _JobRecord, target: JobState,
                    exit_code: int | None = None) -> None:
        while record.state != target:
            step = self._next_step(record.state, target)
            final_exit = exit_code if step == target else None
            self._apply(record, step, exit_code=final_exit)

    @staticmethod
    def _next_step(current: JobState, target: JobState) -> JobState:
        if target in LEGAL_TRANSITIONS[current]:
            return target
        forward = {
            JobState.CREATED: JobState.SUBMITTED,
            JobState.SUBMITTED: JobState.QUEUED,
            JobState.QUEUED: JobState.RUNNING,
        }
        if current in forward:
            return forward[current]
        raise ValidationError(f"no legal path from {current} to {target}")

    def _apply(self, record: _JobRecord, state: JobState,
               exit_code: int | None = None, cause: str | None = None) -> None:
        if state not in LEGAL_TRANSITIONS[record.state]:
            raise ValidationError(f"illegal transition {record.state} -> {state}")
        previous = record.state
        record.state = state
        if exit_code is not None:
            record.exit_code = exit_code
        if cause is not None:
            record.cause = cause
        record.transitions.append((state, self.clock.now))
        if state in TERMINAL_STATES:
            self._active.get(record.spec.resource, set()).discard(record.job_id)
        if self.trace is not None:
            self.trace.emit("job_transition", job_id=record.job_id,
                            resource=record.spec.resource,
                            from_state=previous.value, to_state=state.value,
                            exit_code=record.exit_code if state in TERMINAL_STATES else None)
        for sub in record.subscribers:
            sub._push(state, self.clock.now)
        if state in TERMINAL_STATES:
            record.subscribers.clear()
        if self.on_transition is not None:
            self.on_transition(record.spec, record.job_id, previous, state, self.clock.now)
