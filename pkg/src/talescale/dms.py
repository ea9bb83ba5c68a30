"""Data Management System: compute-local cache for external datasets.

External data is referenced, not copied, until something opens it. The
cache then performs a single simulated transfer per dataset (concurrent
opens coalesce), verifies the checksum on arrival, accounts every byte
moved in an append-only transfer log, and evicts least-recently-used
unpinned entries under capacity pressure. Datasets already resident on a
resource bypass the cache entirely: POSIX-exposed copies are mounted,
non-POSIX copies are staged in locally, and only truly remote data is
fetched over the wide area.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

from .digest import parse as parse_checksum
from .errors import CapacityError, ChecksumMismatchError, DuplicateError, ValidationError
from .resources import ResourceDescriptor


@dataclass(frozen=True)
class ExternalDataRef:
    uri: str
    size_bytes: int
    checksum: str

    def __post_init__(self):
        if not self.uri:
            raise ValidationError("data ref uri must be nonempty")
        if self.size_bytes < 0:
            raise ValidationError(f"data ref {self.uri!r} has negative size")
        if not self.checksum:
            raise ValidationError(f"data ref {self.uri!r} is missing a checksum")
        parse_checksum(self.checksum)

    def to_dict(self) -> dict:
        return {"uri": self.uri, "size_bytes": self.size_bytes, "checksum": self.checksum}

    @classmethod
    def from_dict(cls, raw: dict) -> "ExternalDataRef":
        return cls(uri=raw["uri"], size_bytes=int(raw["size_bytes"]), checksum=raw["checksum"])


class CacheState(str, enum.Enum):
    ABSENT = "absent"
    TRANSFERRING = "transferring"
    RESIDENT = "resident"
    EVICTED = "evicted"


class TransferSource(str, enum.Enum):
    REMOTE_REPO = "remote_repo"
    HPC_LOCAL_STAGEIN = "hpc_local_stagein"


class StagingKind(str, enum.Enum):
    MOUNT = "mount"
    STAGE_IN = "stage_in"
    CACHE_FETCH = "cache_fetch"


@dataclass(frozen=True)
class StagingAction:
    uri: str
    action: StagingKind
    resource: str

    def to_dict(self) -> dict:
        return {"uri": self.uri, "action": self.action.value, "resource": self.resource}


@dataclass(frozen=True)
class TransferRecord:
    uri: str
    source: TransferSource
    bytes: int
    started_at: float
    finished_at: float

    def to_dict(self) -> dict:
        return {
            "uri": self.uri,
            "source": self.source.value,
            "bytes": self.bytes,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


@dataclass
class CacheEntry:
    ref: ExternalDataRef
    state: CacheState = CacheState.ABSENT
    local_path: str | None = None
    last_access: float = 0.0
    pin_count: int = 0


class OpenHandle:
    """Result of an open: ready once the backing transfer completes."""

    __slots__ = ("uri", "ready", "local_path", "error")

    def __init__(self, uri: str):
        self.uri = uri
        self.ready = False
        self.local_path: str | None = None
        self.error: Exception | None = None

    def result(self) -> str:
        if self.error is not None:
            raise self.error
        if not self.ready:
            raise RuntimeError(f"open of {self.uri!r} has not completed")
        return self.local_path


class DatasetCatalog:
    def __init__(self, refs: Iterable[ExternalDataRef] = ()):
        self._refs: dict[str, ExternalDataRef] = {}
        for ref in refs:
            self.register(ref)

    def register(self, ref: ExternalDataRef) -> ExternalDataRef:
        if ref.uri in self._refs:
            raise DuplicateError(f"dataset {ref.uri!r} already registered")
        self._refs[ref.uri] = ref
        return ref

    def get(self, uri: str) -> ExternalDataRef:
        try:
            return self._refs[uri]
        except KeyError:
            raise ValidationError(f"dataset {uri!r} is not registered") from None

    def __contains__(self, uri: str) -> bool:
        return uri in self._refs

    def __iter__(self):
        return iter(self._refs.values())

    def __len__(self) -> int:
        return len(self._refs)


def register_dataset(catalog: DatasetCatalog, uri: str, size_bytes: int, checksum: str) -> ExternalDataRef:
    return catalog.register(ExternalDataRef(uri=uri, size_bytes=size_bytes, checksum=checksum))


def resolve_local(ref: ExternalDataRef, resource: ResourceDescriptor) -> StagingAction:
    """Pick the cheapest staging action for a dataset on a resource.

    Local POSIX copies are mounted (zero transfer), local non-POSIX copies
    are staged in on the resource (no wide-area movement), anything else
    goes through the cache.
    """
    if ref.uri in resource.local_datasets:
        if resource.dataset_interface == "posix":
            return StagingAction(ref.uri, StagingKind.MOUNT, resource.name)
        return StagingAction(ref.uri, StagingKind.STAGE_IN, resource.name)
    return StagingAction(ref.uri, StagingKind.CACHE_FETCH, resource.name)


@dataclass
class PrefetchReport:
    transferred: list[TransferRecord] = field(default_factory=list)
    already_resident: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


class _PendingTransfer:
    __slots__ = ("handles", "finish_at", "started_at")

    def __init__(self, started_at: float, finish_at: float):
        self.handles: list[OpenHandle] = []
        self.started_at = started_at
        self.finish_at = finish_at


class DmsCache:
    """Shared dataset cache driven by the simulation clock.

    Transfers take ``size_bytes / bandwidth`` simulated seconds. Capacity
    is reserved when a transfer starts so parallel transfers can never
    oversubscribe the store.
    """

    def __init__(self, clock, catalog: DatasetCatalog, capacity_bytes: int,
                 bandwidth_bytes_per_s: float, trace=None):
        if capacity_bytes < 0:
            raise ValidationError("cache capacity must be >= 0")
        if bandwidth_bytes_per_s <= 0:
            raise ValidationError("cache bandwidth must be > 0")
        self.clock = clock
        self.catalog = catalog
        self.capacity_bytes = capacity_bytes
        self.bandwidth = bandwidth_bytes_per_s
        self.trace = trace
        self.entries: dict[str, CacheEntry] = {}
        self.transfer_log: list[TransferRecord] = []
        self._pending: dict[str, _PendingTransfer] = {}
        self._corrupt_next: set[str] = set()

    # -- diagnostics ------------------------------------------------------

    def entry(self, uri: str) -> CacheEntry:
        if uri not in self.entries:
            self.entries[uri] = CacheEntry(ref=self.catalog.get(uri))
        return self.entries[uri]

    def resident_bytes(self) -> int:
        committed = sum(e.ref.size_bytes for e in self.entries.values() if e.state == CacheState.RESIDENT)
        reserved = sum(e.ref.size_bytes for e in self.entries.values() if e.state == CacheState.TRANSFERRING)
        return committed + reserved

    def records_for(self, uri: str) -> list[TransferRecord]:
        return [r for r in self.transfer_log if r.uri == uri]

    def inject_corruption(self, uri: str) -> None:
        """Make the next transfer of ``uri`` arrive with a bad digest."""
        self._corrupt_next.add(uri)

    # -- pinning ----------------------------------------------------------

    def pin(self, uri: str) -> None:
        self.entry(uri).pin_count += 1

    def unpin(self, uri: str) -> None:
        e = self.entry(uri)
        if e.pin_count <= 0:
            raise ValidationError(f"{uri!r} is not pinned")
        e.pin_count -= 1

    # -- core operations ---------------------------------------------------

    def open(self, ref: ExternalDataRef) -> OpenHandle:
        """Open a dataset, blocking (in simulated time) until it is resident.

        Driver-context only: advances the clock to the transfer completion.
        Inside event callbacks use :meth:`open_nowait`.
        """
        handle = self.open_nowait(ref)
        if not handle.ready and ref.uri in self._pending:
            self.clock.run_until(self._pending[ref.uri].finish_at)
        if handle.error is not None:
            raise handle.error
        return handle

    def open_nowait(self, ref: ExternalDataRef) -> OpenHandle:
        """Start (or join) the transfer for ``ref`` and return immediately."""
        if ref.uri not in self.catalog:
            raise ValidationError(f"dataset {ref.uri!r} is not registered")
        entry = self.entry(ref.uri)
        handle = OpenHandle(ref.uri)

        if entry.state == CacheState.RESIDENT:
            entry.last_access = self.clock.now
            handle.ready = True
            handle.local_path = entry.local_path
            if self.trace is not None:
                self.trace.emit("cache_hit", uri=ref.uri)
            return handle

        if entry.state == CacheState.TRANSFERRING:
            # Coalesce: ride the in-flight transfer, never start a second one.
            self._pending[ref.uri].handles.append(handle)
            return handle

        self._admit(ref)
        entry.state = CacheState.TRANSFERRING
        duration = ref.size_bytes / self.bandwidth
        pending = _PendingTransfer(started_at=self.clock.now, finish_at=self.clock.now + duration)
        pending.handles.append(handle)
        self._pending[ref.uri] = pending
        if self.trace is not None:
            self.trace.emit("transfer_start", uri=ref.uri, bytes=ref.size_bytes,
                            source=TransferSource.REMOTE_REPO.value)
        if duration == 0:
            self._finish_transfer(ref)
        else:
            self.clock.at(pending.finish_at, lambda: self._finish_transfer(ref))
        return handle

    def prefetch(self, tale, eager_refs: Iterable[ExternalDataRef] | None = None) -> PrefetchReport:
        """Eagerly transfer every absent ref of a Tale (quasi-locality).

        Partial failures are reported per ref; completed transfers stay.
        """
        refs = list(eager_refs) if eager_refs is not None else list(tale.data_refs)
        report = PrefetchReport()
        handles: list[tuple[ExternalDataRef, OpenHandle]] = []
        before = len(self.transfer_log)
        for ref in refs:
            entry = self.entry(ref.uri)
            if entry.state == CacheState.RESIDENT:
                report.already_resident.append(ref.uri)
                continue
            try:
                handles.append((ref, self.open_nowait(ref)))
            except (CapacityError, ValidationError) as exc:
                report.failed[ref.uri] = str(exc)
        finish_times = [self._pending[r.uri].finish_at for r, _ in handles if r.uri in self._pending]
        if finish_times:
            self.clock.run_until(max(finish_times))
        for ref, handle in handles:
            if handle.error is not None:
                report.failed[ref.uri] = str(handle.error)
        report.transferred = self.transfer_log[before:]
        return report

    def evict(self, needed_bytes: int) -> list[str]:
        """Evict LRU unpinned resident entries until ``needed_bytes`` fit."""
        if needed_bytes < 0:
            raise ValidationError("needed_bytes must be >= 0")
        evicted: list[str] = []
        while self.capacity_bytes - self.resident_bytes() < needed_bytes:
            victim = self._lru_victim()
            if victim is None:
                raise CapacityError(
                    f"cannot free {needed_bytes} bytes: "
                    f"{self.capacity_bytes - self.resident_bytes()} free, no evictable entries"
                )
            victim.state = CacheState.EVICTED
            victim.local_path = None
            evicted.append(victim.ref.uri)
            if self.trace is not None:
                self.trace.emit("cache_evict", uri=victim.ref.uri, bytes=victim.ref.size_bytes)
        return evicted

    # -- internals ---------------------------------------------------------

    def _lru_victim(self) -> CacheEntry | None:
        candidates = [
            e for e in self.entries.values()
            if e.state == CacheState.RESIDENT and e.pin_count == 0
        ]
        if not candidates:
            return None
        return min(candidates, key=lambda e: (e.last_access, e.ref.uri))

    def _admit(self, ref: ExternalDataRef) -> None:
        if ref.size_bytes > self.capacity_bytes:
            raise CapacityError(f"{ref.uri!r} ({ref.size_bytes} B) exceeds cache capacity")
        self.evict(ref.size_bytes)

    def _finish_transfer(self, ref: ExternalDataRef) -> None:
        entry = self.entries[ref.uri]
        pending = self._pending.pop(ref.uri)
        corrupted = ref.uri in self._corrupt_next
        self._corrupt_next.discard(ref.uri)
        if corrupted:
            entry.state = CacheState.ABSENT
            error = ChecksumMismatchError(ref.uri, ref.checksum, "sha256:<corrupted>")
            if self.trace is not None:
                self.trace.emit("transfer_failed", uri=ref.uri, reason="checksum mismatch")
            for handle in pending.handles:
                handle.error = error
            return
        record = TransferRecord(
            uri=ref.uri,
            source=TransferSource.REMOTE_REPO,
            bytes=ref.size_bytes,
            started_at=pending.started_at,
            finished_at=self.clock.now,
        )
        self.transfer_log.append(record)
        entry.state = CacheState.RESIDENT
        entry.local_path = f"cache://{ref.uri}"
        entry.last_access = self.clock.now
        if self.trace is not None:
            self.trace.emit("transfer_complete", uri=ref.uri, bytes=ref.size_bytes,
                            source=TransferSource.REMOTE_REPO.value)
        for handle in pending.handles:
            handle.ready = True
            handle.local_path = entry.local_path

    def stage_in(self, ref: ExternalDataRef, resource: ResourceDescriptor) -> TransferRecord:
        """Local stage-in on a resource holding a non-POSIX copy.

        Bytes move inside the resource, not over the wide area, but they
        still move, so the transfer log gets a record.
        """
        if ref.uri not in resource.local_datasets:
            raise ValidationError(f"{ref.uri!r} is not local to {resource.name!r}")
        record = TransferRecord(
            uri=ref.uri,
            source=TransferSource.HPC_LOCAL_STAGEIN,
            bytes=ref.size_bytes,
            started_at=self.clock.now,
            finished_at=self.clock.now,
        )
        self.transfer_log.append(record)
        if self.trace is not None:
            self.trace.emit("transfer_complete", uri=ref.uri, bytes=ref.size_bytes,
                            source=TransferSource.HPC_LOCAL_STAGEIN.value)
        return record


def transfer_log_ndjson(records: Iterable[TransferRecord]) -> bytes:
    import json

    lines = [json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) for r in records]
    return ("\n".join(lines) + "\n").encode() if lines else b""
