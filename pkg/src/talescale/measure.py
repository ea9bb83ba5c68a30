"""Per-model frontend-launch measurements over seeded simulations.

For every feasible execution model this runs one fresh seeded world per
seed, launches a frontend the way that model would, and reports the time
until the frontend is usable plus that run's transport counters. The
numbers witness the launch-time contrast between deployment-cluster
frontends (one image load) and batch-launched frontends (image load plus
queue wait, unless a warm pilot absorbs it).
"""

from __future__ import annotations

from .errors import ValidationError
from .metrics import ReportRow, ReportTable
from .middleware import JobSpec, JobState
from .planner import ExecutionModel, WorkloadRequirements, enumerate_feasible_models
from .queues import sample_queue_wait
from .world import World, WorldConfig

_BATCH_MODELS = (ExecutionModel.M3_HPC_NODE_LOCAL_LRM, ExecutionModel.M4_HPC_MPI)


def _frontend_resource(model: ExecutionModel, config: WorldConfig,
                       req: WorkloadRequirements) -> str:
    inventory = config.inventory
    if model in (ExecutionModel.M1_WT_CLUSTER, ExecutionModel.M5_WT_FRONTEND_REMOTE_LRM):
        return next(r.name for r in inventory if r.kind == "wt_cluster")
    if model == ExecutionModel.M2_HPC_NODE:
        return next(r.name for r in inventory if r.kind == "hpc_cluster" and r.lrm == "none")
    if model == ExecutionModel.M3_HPC_NODE_LOCAL_LRM:
        return next(r.name for r in inventory
                    if r.kind == "hpc_cluster" and r.is_batch
                    and (not req.needs_hpc or r.node_count >= req.min_nodes))
    if model == ExecutionModel.M4_HPC_MPI:
        return next(r.name for r in inventory
                    if r.is_batch and r.mpi_capable and r.node_count >= req.min_nodes)
    # decoupled: same preference order as the planner
    for kind, lrm in (("wt_cluster", None), ("cloud", None), ("hpc_cluster", "none")):
        for r in inventory:
            if r.kind == kind and (lrm is None or r.lrm == lrm):
                return r.name
    return next(r.name for r in inventory if r.is_batch)


def launch_frontend(world: World, model: ExecutionModel, resource_name: str,
                    req: WorkloadRequirements) -> float:
    """Launch one frontend per the model's mechanics; returns seconds to ready.

    Called at the world's current time (after any warmup). Batch models go
    through the middleware and wait for the client-observed Running state;
    a warm pilot slot replaces the queue wait with the dispatch overhead.
    """
    sc = world.config.scenario
    image = sc.image_load_s
    rd = world.config.resources[resource_name]
    requested_at = world.clock.now

    if model == ExecutionModel.M2_HPC_NODE or (
            model == ExecutionModel.M6_DECOUPLED_REMOTE_LRM and not rd.is_batch and rd.queue_model):
        wait = 0.0
        if rd.queue_model is not None:
            wait = sample_queue_wait(rd.queue_model, world.rng_for(resource_name, "frontend"),
                                     requested_at)
        ready = wait + image
    elif model in _BATCH_MODELS or (
            model == ExecutionModel.M6_DECOUPLED_REMOTE_LRM and rd.is_batch):
        pool = world.pools.get(resource_name)
        if pool is not None and pool.has_warm:
            spec = JobSpec(resource=resource_name, command=("frontend",),
                           credential="user", tale_id="frontend")
            pool.claim(spec)
            ready = sc.dispatch_overhead_s + image
        else:
            spec = JobSpec(
                resource=resource_name, command=("frontend",), credential="user",
                node_count=req.min_nodes if model == ExecutionModel.M4_HPC_MPI else 1,
                mpi=model == ExecutionModel.M4_HPC_MPI,
            )
            handle = world.middleware.submit(spec)
            while world.middleware.status(handle).state in (JobState.SUBMITTED, JobState.QUEUED):
                if not world.clock.step():
                    raise ValidationError("simulation ran out of events before the frontend started")
            status = world.middleware.status(handle)
            if status.state != JobState.RUNNING:
                raise ValidationError(f"frontend job ended in {status.state.value}")
            running_at = status.transitions[-1][1]
            ready = (running_at - requested_at) + image
    else:
        ready = image

    world.clock.run_until(requested_at + ready)
    world.frontend_samples.setdefault(model.value, []).append(ready)
    world.trace.emit("frontend_ready", model=model.value, resource=resource_name,
                     time_to_frontend_s=ready)
    return ready


def measure_models(config: WorldConfig, req: WorkloadRequirements, seeds,
                   warmup_s: float = 0.0) -> ReportTable:
    """One report row per (feasible model, seed)."""
    feasibility = enumerate_feasible_models(req, config.inventory)
    rows: list[ReportRow] = []
    for mf in feasibility:
        if not mf.feasible:
            continue
        resource_name = _frontend_resource(mf.model, config, req)
        for seed in seeds:
            world = World(config, seed)
            world.start()
            if warmup_s > 0:
                world.clock.run_until(warmup_s)
            ttf = launch_frontend(world, mf.model, resource_name, req)
            metrics = world.metrics()
            rows.append(ReportRow(
                model=mf.model.value,
                seed=seed,
                time_to_frontend_s=ttf,
                queries=sum(metrics.backend_queries.values()),
                handshakes=metrics.handshakes,
                transfers=metrics.transfers,
            ))
    return ReportTable(rows=rows)
