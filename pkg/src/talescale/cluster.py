"""Simulated batch cluster: the far side of the transport.

Each batch resource gets one SimulatedLrm, a queue of native jobs driven
by the shared clock. The shell entry point accepts the same command
strings a real cluster would (qsub/qstat/qdel and sbatch/sacct/scancel),
so the dialect adapters are exercised end to end: what they format is
what gets parsed here, and what this emits is what they parse back.

Job runtimes come from a tiny command convention::

    sleep N        run N simulated seconds, exit 0
    fail N [code]  run N simulated seconds, exit code (default 1)
    pilot-shim N   placeholder pilot: run for its walltime N
    frontend ...   interactive frontend: runs until the horizon

Anything else runs for the queue model's default runtime.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field

from .errors import TransportError
from .queues import QueueModel, adjust_for_maintenance
from .resources import ResourceDescriptor

FRONTEND_RUNTIME_S = 10.0 ** 9

_PBS_KILL_EXIT = 271


def runtime_of_command(command: list[str] | tuple[str, ...], default_runtime_s: float) -> tuple[float, int]:
    """(runtime seconds, exit code) implied by a job command."""
    command = list(command)
    if not command:
        return default_runtime_s, 0
    head = command[0]
    if head == "sleep" and len(command) > 1:
        return float(command[1]), 0
    if head == "fail":
        runtime = float(command[1]) if len(command) > 1 else default_runtime_s
        code = int(command[2]) if len(command) > 2 else 1
        return runtime, code
    if head == "pilot-shim" and len(command) > 1:
        return float(command[1]), 0
    if head == "frontend":
        return FRONTEND_RUNTIME_S, 0
    return default_runtime_s, 0


@dataclass
class NativeJob:
    native_id: str
    name: str
    command: tuple[str, ...]
    node_count: int
    state: str = "queued"  # queued | running | completed | failed | canceled
    exit_code: int | None = None
    submitted_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    cause: str | None = None
    _start_handle: object = field(default=None, repr=False)
    _end_handle: object = field(default=None, repr=False)


class SimulatedLrm:
    """One cluster's local resource manager."""

    def __init__(self, clock, resource: ResourceDescriptor, rng, trace=None):
        if resource.queue_model is None:
            raise ValueError(f"batch resource {resource.name!r} needs a queue model")
        self.clock = clock
        self.resource = resource
        self.queue_model: QueueModel = resource.queue_model
        self.rng = rng
        self.trace = trace
        self.jobs: dict[str, NativeJob] = {}
        self._counter = 0

    # -- shell ---------------------------------------------------------------

    def execute(self, payload: str) -> str:
        """Run one LRM command line; both PBS and Slurm tools are installed."""
        argv = shlex.split(payload)
        if not argv:
            raise TransportError("empty command")
        tool = argv[0]
        if tool == "qsub":
            return self._qsub(argv[1:])
        if tool == "sbatch":
            return self._sbatch(argv[1:])
        if tool == "qstat":
            return self._qstat(argv[1:])
        if tool == "sacct":
            return self._sacct(argv[1:])
        if tool in ("qdel", "scancel"):
            return self._cancel_cmd(argv[1:])
        raise TransportError(f"unknown command {tool!r} on {self.resource.name}")

    def _qsub(self, args: list[str]) -> str:
        nodes, name, command = 1, "job", []
        i = 0
        while i < len(args):
            if args[i] == "-l" and i + 1 < len(args) and args[i + 1].startswith("nodes="):
                nodes = int(args[i + 1].split("=", 1)[1])
                i += 2
            elif args[i] == "-N" and i + 1 < len(args):
                name = args[i + 1]
                i += 2
            elif args[i] == "--":
                command = args[i + 1:]
                break
            else:
                i += 1
        self._counter += 1
        native_id = f"{self._counter}.{self.resource.name}"
        self._enqueue(native_id, name, command, nodes)
        return native_id

    def _sbatch(self, args: list[str]) -> str:
        nodes, name, command = 1, "job", []
        for arg in args:
            if arg.startswith("--nodes="):
                nodes = int(arg.split("=", 1)[1])
            elif arg.startswith("--job-name="):
                name = arg.split("=", 1)[1]
        if "--wrap" in args:
            command = shlex.split(args[args.index("--wrap") + 1])
        self._counter += 1
        native_id = str(self._counter)
        self._enqueue(native_id, name, command, nodes)
        return f"Submitted batch job {native_id}"

    def _qstat(self, args: list[str]) -> str:
        ids = [a for a in args if not a.startswith("-")]
        blocks = []
        for native_id in ids:
            job = self.jobs.get(native_id)
            if job is None:
                continue
            lines = [f"Job Id: {native_id}"]
            if job.state == "queued":
                lines.append("    job_state = Q")
            elif job.state == "running":
                lines.append("    job_state = R")
            else:
                lines.append("    job_state = F")
                if job.state == "canceled":
                    lines.append(f"    exit_status = {_PBS_KILL_EXIT}")
                else:
                    lines.append(f"    exit_status = {job.exit_code}")
            blocks.append("\n".join(lines))
        return "\n".join(blocks)

    def _sacct(self, args: list[str]) -> str:
        ids: list[str] = []
        for arg in args:
            if arg.startswith("--jobs="):
                ids = arg.split("=", 1)[1].split(",")
        lines = []
        state_names = {
            "queued": "PENDING", "running": "RUNNING", "completed": "COMPLETED",
            "failed": "FAILED", "canceled": "CANCELLED",
        }
        for native_id in ids:
            job = self.jobs.get(native_id)
            if job is None:
                continue
            code = job.exit_code if job.exit_code is not None else 0
            lines.append(f"{native_id}|{state_names[job.state]}|{code}:0")
        return "\n".join(lines)

    def _cancel_cmd(self, args: list[str]) -> str:
        for native_id in args:
            if native_id in self.jobs:
                self.cancel(native_id)
        return ""

    # -- lifecycle -------------------------------------------------------------

    def _enqueue(self, native_id: str, name: str, command: list[str], nodes: int) -> None:
        job = NativeJob(
            native_id=native_id, name=name, command=tuple(command),
            node_count=nodes, submitted_at=self.clock.now,
        )
        self.jobs[native_id] = job
        wait, held = self._wait_for(self.clock.now)
        if self.trace is not None:
            self.trace.emit("backend_job_queued", resource=self.resource.name,
                            native_id=native_id, name=name, nodes=nodes, wait=wait)
        if held and self.queue_model.maintenance_policy == "fail":
            # Reject submissions that would start inside a maintenance window.
            job.cause = "maintenance"
            job._end_handle = self.clock.at(self.clock.now, lambda: self._finish(native_id, "canceled"))
            return
        job._start_handle = self.clock.at(self.clock.now + wait, lambda: self._start(native_id))

    def _wait_for(self, submit_time: float) -> tuple[float, bool]:
        raw = self.queue_model.sample(self.rng)
        wait = adjust_for_maintenance(self.queue_model, submit_time, raw)
        return wait, wait > raw

    def _start(self, native_id: str) -> None:
        job = self.jobs[native_id]
        if job.state != "queued":
            return
        job.state = "running"
        job.started_at = self.clock.now
        if self.trace is not None:
            self.trace.emit("backend_job_started", resource=self.resource.name,
                            native_id=native_id, name=job.name, nodes=job.node_count)
        runtime, exit_code = runtime_of_command(job.command, self.queue_model.default_runtime_s)
        final = "completed" if exit_code == 0 else "failed"
        job.exit_code = exit_code
        job._end_handle = self.clock.at(self.clock.now + runtime, lambda: self._finish(native_id, final))

    def _finish(self, native_id: str, state: str) -> None:
        job = self.jobs[native_id]
        if job.state not in ("queued", "running"):
            return
        if state == "canceled":
            job.exit_code = None
        job.state = state
        job.finished_at = self.clock.now
        if self.trace is not None:
            self.trace.emit("backend_job_finished", resource=self.resource.name,
                            native_id=native_id, name=job.name, state=state,
                            exit_code=job.exit_code)

    def cancel(self, native_id: str) -> None:
        job = self.jobs.get(native_id)
        if job is None or job.state in ("completed", "failed", "canceled"):
            return
        for handle in (job._start_handle, job._end_handle):
            if handle is not None:
                self.clock.cancel(handle)
        self._finish(native_id, "canceled")

