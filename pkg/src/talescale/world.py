"""Simulation world: config loading, wiring, and scenario execution.

A WorldConfig is the validated, immutable description of a simulated
deployment (resources, queue models, pool policies, cache, scenario
script). A World is one seeded instantiation of it: shared clock, trace,
transport with per-resource simulated LRMs, middleware, pilot pools,
dataset cache, and proxy. Running the same config with the same seed and
horizon yields a byte-identical trace.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .clock import SimClock
from .cluster import SimulatedLrm
from .dms import DatasetCatalog, DmsCache, ExternalDataRef, StagingKind
from .errors import ConfigError, ValidationError
from .metrics import ScenarioMetrics
from .middleware import JobSpec, JobState, LrmMiddleware
from .pilots import PilotPool, PoolPolicy
from .proxy import ProxyRegistry, SimulatedNetwork
from .queues import QueueModel
from .resources import ResourceDescriptor
from .tale import ProvenanceKind, Tale, record_provenance
from .trace import TraceLog
from .transport import Transport

_KNOWN_OPS = ("submit_jobs", "workload", "open_dataset", "prefetch", "cancel")

_KNOWN_SECTIONS = {"resources", "queues", "pools", "cache", "scenario"}


@dataclass(frozen=True)
class ScenarioConfig:
    image_load_s: float = 8.0
    poll_interval_s: float = 5.0
    idle_ttl_s: float | None = 300.0
    transport_rtt_s: float = 0.05
    handshake_s: float = 0.5
    dispatch_overhead_s: float = 0.2
    credentials: tuple[str, ...] = ("user",)
    actions: tuple[dict, ...] = ()

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "credentials" in raw:
            raw["credentials"] = tuple(raw["credentials"])
        if "actions" in raw:
            raw["actions"] = tuple(raw["actions"])
        return cls(**raw)


@dataclass
class WorldConfig:
    resources: dict[str, ResourceDescriptor]
    queues: dict[str, QueueModel]
    pools: list[PoolPolicy] = field(default_factory=list)
    cache_capacity_bytes: int = 10 ** 12
    cache_bandwidth_bytes_per_s: float = 10 ** 8
    datasets: list[ExternalDataRef] = field(default_factory=list)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    @property
    def inventory(self) -> list[ResourceDescriptor]:
        return list(self.resources.values())


def load_config(source) -> WorldConfig:
    """Parse and cross-validate a simulation config (path, str or dict)."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {source}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    queues = {}
    for name, qraw in raw.get("queues", {}).items():
        queues[name] = QueueModel.from_dict(qraw)

    resources: dict[str, ResourceDescriptor] = {}
    for rraw in raw.get("resources", []):
        rd = ResourceDescriptor.from_dict(rraw, queues=queues)
        if rd.name in resources:
            raise ConfigError(f"duplicate resource name {rd.name!r}")
        if rd.is_batch and rd.queue_model is None:
            raise ConfigError(f"batch resource {rd.name!r} has no queue model")
        resources[rd.name] = rd
    if not resources:
        raise ConfigError("config declares no resources")

    pools = []
    for praw in raw.get("pools", []):
        try:
            policy = PoolPolicy.from_dict(praw)
        except (TypeError, ValidationError) as exc:
            raise ConfigError(f"bad pool policy {praw!r}: {exc}") from exc
        if policy.resource not in resources:
            raise ConfigError(
                f"pool policy references unknown resource {policy.resource!r}"
            )
        if not resources[policy.resource].is_batch:
            raise ConfigError(f"pool resource {policy.resource!r} has no batch LRM")
        pools.append(policy)

    cache_raw = dict(raw.get("cache", {}))
    datasets = [ExternalDataRef.from_dict(d) for d in cache_raw.pop("datasets", [])]
    capacity = int(cache_raw.pop("capacity_bytes", 10 ** 12))
    bandwidth = float(cache_raw.pop("bandwidth_bytes_per_s", 10 ** 8))
    if cache_raw:
        raise ConfigError(f"unknown cache keys: {sorted(cache_raw)}")

    scenario = ScenarioConfig.from_dict(raw.get("scenario", {}))
    known_uris = {d.uri for d in datasets}
    for action in scenario.actions:
        op = action.get("op")
        if op not in _KNOWN_OPS:
            raise ConfigError(f"unknown scenario op {op!r}")
        if float(action.get("t", 0.0)) < 0:
            raise ConfigError(f"scenario action {op!r} has negative time")
        if "resource" in action and action["resource"] not in resources:
            raise ConfigError(f"scenario op {op!r} references unknown resource {action['resource']!r}")
        for uri in [action["uri"]] if "uri" in action else action.get("uris", []):
            if uri not in known_uris:
                raise ConfigError(f"scenario op {op!r} references unknown dataset {uri!r}")

    return WorldConfig(
        resources=resources, queues=queues, pools=pools,
        cache_capacity_bytes=capacity, cache_bandwidth_bytes_per_s=bandwidth,
        datasets=datasets, scenario=scenario,
    )


class World:
    """One seeded instantiation of a WorldConfig."""

    def __init__(self, config: WorldConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.clock = SimClock()
        self.trace = TraceLog(self.clock)
        sc = config.scenario
        self.transport = Transport(
            self.clock, self.trace, rtt_s=sc.transport_rtt_s,
            handshake_s=sc.handshake_s, idle_ttl_s=sc.idle_ttl_s,
        )
        self.middleware = LrmMiddleware(
            self.clock, self.transport, self.trace,
            poll_interval_s=sc.poll_interval_s, on_transition=self._on_transition,
        )
        self.clusters: dict[str, SimulatedLrm] = {}
        for rd in config.resources.values():
            self.middleware.register_resource(rd)
            if rd.is_batch:
                # the queue model's own seed participates, so one queue can be
                # re-rolled independently of the run seed
                backend = SimulatedLrm(
                    self.clock, rd,
                    self.rng_for(rd.name, f"queue:{rd.queue_model.seed}"), self.trace,
                )
                self.clusters[rd.name] = backend
                self.transport.register_backend(rd.name, backend)
        for credential in sc.credentials:
            self.transport.register_credential(credential)
        self.catalog = DatasetCatalog(config.datasets)
        self.cache = DmsCache(
            self.clock, self.catalog, config.cache_capacity_bytes,
            config.cache_bandwidth_bytes_per_s, self.trace,
        )
        self.network = SimulatedNetwork()
        self.proxy = ProxyRegistry(self.network, config.resources, self.clock, self.trace)
        self.pools: dict[str, PilotPool] = {}
        self.workload_latencies: list[float] = []
        self.frontend_samples: dict[str, list[float]] = {}
        self.tales: dict[str, Tale] = {}
        self._latency_watch: dict[str, float] = {}
        self._submitted: list = []
        self._started = False
        self.clock.at(0.0, self._bootstrap)
        for action in sc.actions:
            self.clock.at(float(action.get("t", 0.0)), lambda a=action: self._run_action(a))

    # -- seeding -----------------------------------------------------------

    def rng_for(self, name: str, purpose: str) -> random.Random:
        # String seeding hashes through sha512: stable across processes.
        return random.Random(f"{self.seed}|{name}|{purpose}")

    # -- lifecycle -----------------------------------------------------------

    def _bootstrap(self) -> None:
        for policy in self.config.pools:
            self.pools[policy.resource] = PilotPool(
                self.clock, self.middleware, policy, self.trace,
                dispatch_overhead_s=self.config.scenario.dispatch_overhead_s,
                latency_sink=self.workload_latencies,
            )

    def start(self) -> None:
        """Fire the t=0 bootstrap (pools, first actions) once."""
        if not self._started:
            self._started = True
            self.clock.run_until(0.0)

    def run(self, horizon: float) -> tuple[TraceLog, ScenarioMetrics]:
        if horizon <= 0:
            raise ValidationError("horizon must be > 0")
        self.start()
        self.clock.run_until(horizon)
        return self.trace, self.metrics()

    # -- scenario actions ------------------------------------------------------

    def _run_action(self, action: dict) -> None:
        op = action["op"]
        if op == "submit_jobs":
            spacing = float(action.get("spacing", 0.0))
            for i in range(int(action.get("count", 1))):
                spec = self._spec_from(action)
                if spacing and i:
                    self.clock.after(spacing * i, lambda s=spec: self._submit(s))
                else:
                    self._submit(spec)
        elif op == "workload":
            self.submit_workload(self._spec_from(action), via_pool=action.get("via_pool", True))
        elif op == "open_dataset":
            self.cache.open_nowait(self.catalog.get(action["uri"]))
        elif op == "prefetch":
            uris = action.get("uris") or [d.uri for d in self.catalog]
            for uri in uris:
                entry = self.cache.entry(uri)
                if entry.state.value in ("absent", "evicted"):
                    self.cache.open_nowait(self.catalog.get(uri))
        elif op == "cancel":
            index = int(action["job_index"])
            if index < len(self._submitted):
                self.middleware.cancel(self._submitted[index])

    def _spec_from(self, action: dict) -> JobSpec:
        return JobSpec(
            resource=action["resource"],
            command=tuple(action.get("command", ("sleep", "30"))),
            credential=action.get("credential", "user"),
            tale_id=action.get("tale_id"),
            node_count=int(action.get("node_count", 1)),
            mpi=bool(action.get("mpi", False)),
        )

    def _submit(self, spec: JobSpec):
        handle = self.middleware.submit(spec)
        self._submitted.append(handle)
        return handle

    # -- workloads ---------------------------------------------------------

    def submit_workload(self, spec: JobSpec, via_pool: bool = True):
        """Claim a warm pilot slot when available, else direct submit.

        Either path records the workload start latency in the metrics and
        the trace.
        """
        pool = self.pools.get(spec.resource)
        if via_pool and pool is not None:
            slot = pool.claim(spec)
            if slot is not None:
                return ("pilot", slot)
        started = self.clock.now
        handle = self._submit(spec)
        self._latency_watch[handle.job_id] = started
        return ("lrm", handle)

    def _on_transition(self, spec: JobSpec, job_id: str, previous, state, t: float) -> None:
        if state == JobState.RUNNING and job_id in self._latency_watch:
            latency = t - self._latency_watch.pop(job_id)
            self.workload_latencies.append(latency)
            self.trace.emit("workload_started", resource=spec.resource, via="lrm",
                            latency=latency, tale_id=spec.tale_id, job_id=job_id)
        tale = self.tales.get(spec.tale_id) if spec.tale_id else None
        if tale is not None:
            kind = (ProvenanceKind.JOB_SUBMITTED if state == JobState.SUBMITTED
                    else ProvenanceKind.JOB_STATE_CHANGE)
            record_provenance(tale, tale.next_event(
                kind, {"job_id": job_id, "from": previous.value, "to": state.value},
                timestamp=t,
            ))

    # -- tales & staging ----------------------------------------------------

    def attach_tale(self, tale: Tale) -> None:
        """Track a tale so its jobs' transitions land in its provenance.

        Ids are unique within the world's tale registry.
        """
        existing = self.tales.get(tale.id)
        if existing is not None and existing is not tale:
            from .errors import DuplicateError

            raise DuplicateError(f"tale id {tale.id!r} already attached")
        self.tales[tale.id] = tale

    def apply_staging(self, plan) -> None:
        """Execute a placement plan's staging actions against this world."""
        for action in plan.staging_actions:
            ref = self.catalog.get(action.uri)
            if action.action == StagingKind.MOUNT:
                self.trace.emit("mount", uri=action.uri, resource=action.resource)
            elif action.action == StagingKind.STAGE_IN:
                self.cache.stage_in(ref, self.config.resources[action.resource])
            else:
                self.cache.open(ref)

    def pool_state(self) -> dict[str, bool]:
        return {name: pool.has_warm for name, pool in self.pools.items()}

    # -- metrics ------------------------------------------------------------

    def metrics(self) -> ScenarioMetrics:
        m = ScenarioMetrics(
            time_to_frontend={k: list(v) for k, v in self.frontend_samples.items()},
            backend_queries={
                name: self.transport.query_count(name) for name in sorted(self.clusters)
            },
            handshakes=self.transport.handshake_count,
            transfers=len(self.cache.transfer_log),
            transfer_bytes=sum(r.bytes for r in self.cache.transfer_log),
            poll_failures=self.middleware.poll_failures,
            workload_start_latencies=list(self.workload_latencies),
        )
        m.validate()
        return m


def run_scenario(config: WorldConfig, seed: int, horizon: float) -> tuple[bytes, ScenarioMetrics]:
    """Run one seeded scenario; the trace bytes are a pure function of
    (config, seed, horizon)."""
    world = World(config, seed)
    trace, metrics = world.run(horizon)
    return trace.to_ndjson(), metrics
