"""Placement planner over the six execution models.

Given workload requirements and a resource inventory, the planner reports
which of the six deployment models are feasible and why, then picks the
placement minimizing either expected time to a usable frontend or wide-
area data movement. Selection is deterministic: ties break by model order
(M1 first), then inventory order.

Model rules, fixed as this artifact's policy:

* M1 frontend and workload on the deployment cluster: single-node,
  non-MPI work only.
* M2 frontend on a directly reachable HPC node (lrm=none): single-node,
  non-MPI.
* M3 frontend on an HPC node with local batch LRM access.
* M4 frontend as an MPI allocation; the only model serving MPI workloads.
* M5 frontend on the deployment cluster, workload on a remote batch LRM.
* M6 decoupled: a user-named frontend resource (recorded as an override)
  with workloads on any batch LRM.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .dms import DatasetCatalog, ExternalDataRef, StagingAction, StagingKind, resolve_local
from .errors import InfeasiblePlanError, ValidationError
from .resources import ResourceDescriptor


class ExecutionModel(str, enum.Enum):
    M1_WT_CLUSTER = "M1_wt_cluster"
    M2_HPC_NODE = "M2_hpc_node"
    M3_HPC_NODE_LOCAL_LRM = "M3_hpc_node_local_lrm"
    M4_HPC_MPI = "M4_hpc_mpi"
    M5_WT_FRONTEND_REMOTE_LRM = "M5_wt_frontend_remote_lrm"
    M6_DECOUPLED_REMOTE_LRM = "M6_decoupled_remote_lrm"


MODEL_ORDER = tuple(ExecutionModel)

OBJECTIVES = ("min_time_to_frontend", "min_data_movement")


@dataclass(frozen=True)
class WorkloadRequirements:
    needs_hpc: bool = False
    needs_mpi: bool = False
    min_nodes: int = 1
    dataset_uris: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.min_nodes < 1:
            raise ValidationError("min_nodes must be >= 1")
        if self.needs_mpi and not self.needs_hpc:
            raise ValidationError("needs_mpi implies needs_hpc")
        object.__setattr__(self, "dataset_uris", frozenset(self.dataset_uris))

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkloadRequirements":
        return cls(
            needs_hpc=bool(raw.get("needs_hpc", False)),
            needs_mpi=bool(raw.get("needs_mpi", False)),
            min_nodes=int(raw.get("min_nodes", 1)),
            dataset_uris=frozenset(raw.get("dataset_uris", [])),
        )


@dataclass(frozen=True)
class ModelFeasibility:
    model: ExecutionModel
    feasible: bool
    reason: str


@dataclass(frozen=True)
class PlacementPlan:
    model: ExecutionModel
    frontend_resource: str
    workload_resources: tuple[str, ...]
    proxy_required: bool
    staging_actions: tuple[StagingAction, ...]
    estimated_time_to_frontend: float
    objective: str
    reasons: tuple[str, ...]
    user_override: bool = False

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "frontend_resource": self.frontend_resource,
            "workload_resources": list(self.workload_resources),
            "proxy_required": self.proxy_required,
            "staging_actions": [a.to_dict() for a in self.staging_actions],
            "estimated_time_to_frontend": self.estimated_time_to_frontend,
            "objective": self.objective,
            "reasons": list(self.reasons),
            "user_override": self.user_override,
        }


def _batch_candidates(req: WorkloadRequirements, inventory) -> list[ResourceDescriptor]:
    return [
        r for r in inventory
        if r.kind == "hpc_cluster" and r.lrm == "batch"
        and (not req.needs_hpc or r.node_count >= req.min_nodes)
    ]


def enumerate_feasible_models(req: WorkloadRequirements,
                              inventory: list[ResourceDescriptor]) -> list[ModelFeasibility]:
    """Feasibility of all six models, in model order, with reasons."""
    if not inventory:
        raise ValidationError("inventory must not be empty")
    wt = [r for r in inventory if r.kind == "wt_cluster"]
    hpc_direct = [r for r in inventory if r.kind == "hpc_cluster" and r.lrm == "none"]
    batch = _batch_candidates(req, inventory)
    mpi_ok = [r for r in batch if r.mpi_capable and r.node_count >= req.min_nodes]

    results = []

    def add(model, feasible, reason):
        results.append(ModelFeasibility(model=model, feasible=feasible, reason=reason))

    if not wt:
        add(ExecutionModel.M1_WT_CLUSTER, False, "no wt_cluster in inventory")
    elif req.needs_mpi:
        add(ExecutionModel.M1_WT_CLUSTER, False, "MPI required; wt cluster cannot host MPI workloads")
    elif req.min_nodes > 1:
        add(ExecutionModel.M1_WT_CLUSTER, False, "multi-node workloads need an LRM-backed model")
    else:
        add(ExecutionModel.M1_WT_CLUSTER, True, "wt cluster hosts frontend and local jobs")

    if not hpc_direct:
        add(ExecutionModel.M2_HPC_NODE, False, "no directly reachable hpc_cluster (lrm=none)")
    elif req.needs_mpi:
        add(ExecutionModel.M2_HPC_NODE, False, "MPI required; a single node cannot host it")
    elif req.min_nodes > 1:
        add(ExecutionModel.M2_HPC_NODE, False, "multi-node workloads need an LRM-backed model")
    else:
        add(ExecutionModel.M2_HPC_NODE, True, "frontend on a single directly reachable HPC node")

    if req.needs_mpi:
        add(ExecutionModel.M3_HPC_NODE_LOCAL_LRM, False, "MPI workloads require the MPI execution model")
    elif not batch:
        add(ExecutionModel.M3_HPC_NODE_LOCAL_LRM, False, _no_batch_reason(req))
    else:
        add(ExecutionModel.M3_HPC_NODE_LOCAL_LRM, True, "frontend on an HPC node with local LRM access")

    if not req.needs_mpi:
        add(ExecutionModel.M4_HPC_MPI, False, "workload does not require MPI")
    elif not mpi_ok:
        add(ExecutionModel.M4_HPC_MPI, False,
            f"no MPI-capable resource with >= {req.min_nodes} nodes")
    else:
        add(ExecutionModel.M4_HPC_MPI, True, "frontend launched as an MPI allocation")

    if req.needs_mpi:
        add(ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM, False, "MPI workloads require the MPI execution model")
    elif not wt:
        add(ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM, False, "no wt_cluster to host the frontend")
    elif not batch:
        add(ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM, False, _no_batch_reason(req))
    else:
        add(ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM, True, "frontend on wt cluster, jobs to a remote LRM")

    if req.needs_mpi:
        add(ExecutionModel.M6_DECOUPLED_REMOTE_LRM, False, "MPI workloads require the MPI execution model")
    elif not batch:
        add(ExecutionModel.M6_DECOUPLED_REMOTE_LRM, False, _no_batch_reason(req))
    else:
        add(ExecutionModel.M6_DECOUPLED_REMOTE_LRM, True, "decoupled frontend with remote LRM access")

    return results


def _no_batch_reason(req: WorkloadRequirements) -> str:
    if req.needs_hpc and req.min_nodes > 1:
        return f"no batch hpc_cluster with >= {req.min_nodes} nodes"
    return "no hpc_cluster with a batch LRM"


def estimate_time_to_frontend(model: ExecutionModel, resource: ResourceDescriptor,
                              image_load_s: float, pool_state=None,
                              dispatch_overhead_s: float = 0.2) -> float:
    """Expected seconds until a usable frontend on this resource.

    Deployment-cluster and decoupled non-batch frontends cost one image
    load. Batch-launched frontends add the queue model's analytic mean
    wait, unless a warm pilot slot turns that into a dispatch overhead.
    """
    model = ExecutionModel(model)
    _check_pairing(model, resource)
    queued_models = (ExecutionModel.M2_HPC_NODE, ExecutionModel.M3_HPC_NODE_LOCAL_LRM,
                     ExecutionModel.M4_HPC_MPI)
    decoupled_queued = (model == ExecutionModel.M6_DECOUPLED_REMOTE_LRM
                        and (resource.is_batch or resource.queue_model is not None))
    if model in queued_models or decoupled_queued:
        if resource.is_batch and pool_state is not None and pool_state.get(resource.name):
            return image_load_s + dispatch_overhead_s
        wait = resource.queue_model.expected_wait() if resource.queue_model else 0.0
        return image_load_s + wait
    return image_load_s


def _check_pairing(model: ExecutionModel, resource: ResourceDescriptor) -> None:
    ok = {
        ExecutionModel.M1_WT_CLUSTER: resource.kind == "wt_cluster",
        ExecutionModel.M2_HPC_NODE: resource.kind == "hpc_cluster" and resource.lrm == "none",
        ExecutionModel.M3_HPC_NODE_LOCAL_LRM: resource.kind == "hpc_cluster" and resource.is_batch,
        ExecutionModel.M4_HPC_MPI: resource.kind == "hpc_cluster" and resource.is_batch and resource.mpi_capable,
        ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM: resource.kind == "wt_cluster",
        ExecutionModel.M6_DECOUPLED_REMOTE_LRM: True,
    }[model]
    if not ok:
        raise ValidationError(f"{model.value} cannot place a frontend on {resource.name!r}")


def _decoupled_frontend(inventory, batch: list[ResourceDescriptor]) -> ResourceDescriptor:
    # Preference for the decoupled frontend when the user names nothing:
    # deployment cluster, then cloud, then a direct-access node, then the
    # workload cluster itself.
    for kind, lrm in (("wt_cluster", None), ("cloud", None), ("hpc_cluster", "none")):
        for r in inventory:
            if r.kind == kind and (lrm is None or r.lrm == lrm):
                return r
    return batch[0]


def plan_placement(req: WorkloadRequirements, inventory: list[ResourceDescriptor],
                   objective: str = "min_time_to_frontend", *,
                   catalog: DatasetCatalog | None = None,
                   frontend_override: str | None = None,
                   image_load_s: float = 8.0,
                   pool_state=None,
                   dispatch_overhead_s: float = 0.2) -> PlacementPlan:
    """Deterministically choose the best feasible placement.

    ``frontend_override`` names the user-supplied frontend resource and
    restricts planning to the decoupled model (recorded as an override).
    """
    if objective not in OBJECTIVES:
        raise ValidationError(f"unknown objective {objective!r}; use one of {OBJECTIVES}")
    feasibility = enumerate_feasible_models(req, inventory)
    feasible = {mf.model for mf in feasibility if mf.feasible}
    reasons = tuple(
        f"{mf.model.value}: {'feasible' if mf.feasible else 'infeasible'} - {mf.reason}"
        for mf in feasibility
    )
    by_name = {r.name: r for r in inventory}
    index = {r.name: i for i, r in enumerate(inventory)}
    wt = [r for r in inventory if r.kind == "wt_cluster"]
    hpc_direct = [r for r in inventory if r.kind == "hpc_cluster" and r.lrm == "none"]
    batch = _batch_candidates(req, inventory)
    mpi_ok = [r for r in batch if r.mpi_capable and r.node_count >= req.min_nodes]

    override = None
    if frontend_override is not None:
        override = by_name.get(frontend_override)
        if override is None:
            raise ValidationError(f"frontend override {frontend_override!r} is not in the inventory")
        if ExecutionModel.M6_DECOUPLED_REMOTE_LRM not in feasible:
            raise InfeasiblePlanError(list(reasons))
        feasible = {ExecutionModel.M6_DECOUPLED_REMOTE_LRM}

    # (model, frontend, workload resource or None) candidates
    candidates: list[tuple[ExecutionModel, ResourceDescriptor, ResourceDescriptor | None]] = []
    if ExecutionModel.M1_WT_CLUSTER in feasible:
        candidates.append((ExecutionModel.M1_WT_CLUSTER, wt[0], wt[0] if req.needs_hpc else None))
    if ExecutionModel.M2_HPC_NODE in feasible:
        for r in hpc_direct:
            candidates.append((ExecutionModel.M2_HPC_NODE, r, r if req.needs_hpc else None))
    if ExecutionModel.M3_HPC_NODE_LOCAL_LRM in feasible:
        for r in batch:
            candidates.append((ExecutionModel.M3_HPC_NODE_LOCAL_LRM, r, r if req.needs_hpc else None))
    if ExecutionModel.M4_HPC_MPI in feasible:
        for r in mpi_ok:
            candidates.append((ExecutionModel.M4_HPC_MPI, r, r))
    if ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM in feasible:
        for r in batch:
            candidates.append((ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM, wt[0], r if req.needs_hpc else None))
    if ExecutionModel.M6_DECOUPLED_REMOTE_LRM in feasible:
        frontend = override if override is not None else _decoupled_frontend(inventory, batch)
        for r in batch:
            candidates.append((ExecutionModel.M6_DECOUPLED_REMOTE_LRM, frontend, r if req.needs_hpc else None))

    if not candidates:
        raise InfeasiblePlanError(list(reasons))

    def ref_for(uri: str) -> ExternalDataRef:
        if catalog is not None and uri in catalog:
            return catalog.get(uri)
        return ExternalDataRef(uri=uri, size_bytes=1, checksum="sha256:unknown")

    def wide_area_bytes(frontend, workload) -> int:
        consumer = workload if workload is not None else frontend
        total = 0
        for uri in sorted(req.dataset_uris):
            action = resolve_local(ref_for(uri), consumer)
            if action.action == StagingKind.CACHE_FETCH:
                total += ref_for(uri).size_bytes
        return total

    def score(candidate):
        model, frontend, workload = candidate
        if objective == "min_time_to_frontend":
            primary = estimate_time_to_frontend(
                model, frontend, image_load_s, pool_state, dispatch_overhead_s)
        else:
            primary = wide_area_bytes(frontend, workload)
        return (
            primary,
            MODEL_ORDER.index(model),
            index[frontend.name],
            index[workload.name] if workload is not None else -1,
        )

    model, frontend, workload = min(candidates, key=score)
    consumer = workload if workload is not None else frontend
    staging = tuple(
        resolve_local(ref_for(uri), consumer) for uri in sorted(req.dataset_uris)
    )
    estimate = estimate_time_to_frontend(
        model, frontend, image_load_s, pool_state, dispatch_overhead_s)
    notes = list(reasons)
    notes.append(f"selected {model.value} minimizing {objective}")
    if override is not None:
        notes.append(f"user_override=true: frontend pinned to {override.name}")
    return PlacementPlan(
        model=model,
        frontend_resource=frontend.name,
        workload_resources=(workload.name,) if workload is not None else (),
        proxy_required=not frontend.allows_incoming_connections,
        staging_actions=staging,
        estimated_time_to_frontend=estimate,
        objective=objective,
        reasons=tuple(notes),
        user_override=override is not None,
    )
