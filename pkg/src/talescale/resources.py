"""Compute resource descriptors shared by the planner, middleware and cache."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, ValidationError
from .queues import QueueModel

RESOURCE_KINDS = ("wt_cluster", "hpc_cluster", "cloud")
LRM_KINDS = ("none", "batch")
DATASET_INTERFACES = ("posix", "non_posix")


@dataclass(frozen=True)
class ResourceDescriptor:
    """One compute resource in the inventory.

    ``local_datasets`` lists dataset URIs already resident on the resource;
    ``dataset_interface`` says whether they are reachable from a POSIX file
    system (mountable) or only through a non-POSIX interface (stage-in).
    ``no_proxy`` flags resources whose policy forbids proxied frontend
    access even when incoming connections are blocked.
    """

    name: str
    kind: str
    lrm: str = "none"
    allows_incoming_connections: bool = True
    mpi_capable: bool = False
    can_compile: bool = False
    node_count: int = 1
    local_datasets: frozenset[str] = field(default_factory=frozenset)
    dataset_interface: str = "posix"
    no_proxy: bool = False
    dialect: str | None = None
    queue_model: QueueModel | None = None

    def __post_init__(self):
        if not self.name:
            raise ValidationError("resource name must be nonempty")
        if self.kind not in RESOURCE_KINDS:
            raise ValidationError(f"unknown resource kind {self.kind!r}")
        if self.lrm not in LRM_KINDS:
            raise ValidationError(f"unknown lrm {self.lrm!r}")
        if self.dataset_interface not in DATASET_INTERFACES:
            raise ValidationError(f"unknown dataset interface {self.dataset_interface!r}")
        if self.node_count < 1:
            raise ValidationError("node_count must be >= 1")
        if self.kind == "wt_cluster" and (self.lrm != "none" or not self.allows_incoming_connections):
            raise ValidationError("wt_cluster must have lrm=none and allow incoming connections")
        if self.lrm == "batch" and self.dialect is None:
            object.__setattr__(self, "dialect", "sim-pbs")
        object.__setattr__(self, "local_datasets", frozenset(self.local_datasets))

    @property
    def is_batch(self) -> bool:
        return self.lrm == "batch"

    @classmethod
    def from_dict(cls, raw: dict, queues: dict[str, QueueModel] | None = None) -> "ResourceDescriptor":
        raw = dict(raw)
        queue_name = raw.pop("queue", None)
        if "local_datasets" in raw:
            raw["local_datasets"] = frozenset(raw["local_datasets"])
        qm = raw.pop("queue_model", None)
        if isinstance(qm, dict):
            qm = QueueModel.from_dict(qm)
        if queue_name is not None:
            if queues is None or queue_name not in (queues or {}):
                raise ConfigError(
                    f"resource {raw.get('name')!r} references unknown queue {queue_name!r}"
                )
            qm = queues[queue_name]
        try:
            return cls(queue_model=qm, **raw)
        except TypeError as exc:
            raise ConfigError(f"bad resource entry {raw.get('name')!r}: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "lrm": self.lrm,
            "allows_incoming_connections": self.allows_incoming_connections,
            "mpi_capable": self.mpi_capable,
            "can_compile": self.can_compile,
            "node_count": self.node_count,
            "local_datasets": sorted(self.local_datasets),
            "dataset_interface": self.dataset_interface,
            "no_proxy": self.no_proxy,
            "dialect": self.dialect,
        }
