"""LRM dialect adapters.

The middleware speaks three fixed internal verbs — submit, batch_status,
cancel — and an adapter translates each into the command string a
particular queuing system expects, then parses that system's output back
into neutral job states. Swapping the adapter is the whole longevity
story: the internal API never moves.

Neutral backend states: queued, running, completed, failed, canceled.
"""

from __future__ import annotations

import re
import shlex

from .errors import DuplicateError, UnknownDialectError

BACKEND_STATES = ("queued", "running", "completed", "failed", "canceled")

# PBS reports a kill with exit_status 271; adapters map it to "canceled".
PBS_KILL_EXIT = 271


class DialectAdapter:
    name: str = "abstract"

    def format_submit(self, command: list[str], node_count: int, job_name: str) -> str:
        raise NotImplementedError

    def parse_submit(self, output: str) -> str:
        raise NotImplementedError

    def format_status(self, native_ids: list[str]) -> str:
        raise NotImplementedError

    def parse_status(self, output: str) -> dict[str, tuple[str, int | None]]:
        raise NotImplementedError

    def format_cancel(self, native_id: str) -> str:
        raise NotImplementedError


class SimPbsAdapter(DialectAdapter):
    name = "sim-pbs"

    def format_submit(self, command, node_count, job_name):
        return f"qsub -l nodes={node_count} -N {job_name} -- {shlex.join(command)}"

    def parse_submit(self, output):
        return output.strip()

    def format_status(self, native_ids):
        return "qstat -f " + " ".join(native_ids)

    def parse_status(self, output):
        states: dict[str, tuple[str, int | None]] = {}
        current = None
        for line in output.splitlines():
            m = re.match(r"^Job Id:\s*(\S+)", line)
            if m:
                current = m.group(1)
                continue
            m = re.match(r"^\s*job_state\s*=\s*(\S+)", line)
            if m and current:
                letter = m.group(1)
                if letter == "Q":
                    states[current] = ("queued", None)
                elif letter == "R":
                    states[current] = ("running", None)
                continue
            m = re.match(r"^\s*exit_status\s*=\s*(-?\d+)", line)
            if m and current:
                code = int(m.group(1))
                if code == PBS_KILL_EXIT:
                    states[current] = ("canceled", None)
                elif code == 0:
                    states[current] = ("completed", 0)
                else:
                    states[current] = ("failed", code)
        return states

    def format_cancel(self, native_id):
        return f"qdel {native_id}"


class SimSlurmAdapter(DialectAdapter):
    name = "sim-slurm"

    _STATE_MAP = {
        "PENDING": "queued",
        "RUNNING": "running",
        "COMPLETED": "completed",
        "FAILED": "failed",
        "CANCELLED": "canceled",
    }

    def format_submit(self, command, node_count, job_name):
        wrapped = shlex.join(command)
        return f"sbatch --nodes={node_count} --job-name={job_name} --wrap {shlex.quote(wrapped)}"

    def parse_submit(self, output):
        m = re.match(r"^Submitted batch job (\S+)", output.strip())
        if not m:
            raise ValueError(f"unparseable sbatch output: {output!r}")
        return m.group(1)

    def format_status(self, native_ids):
        joined = ",".join(native_ids)
        return f"sacct --jobs={joined} --format=JobID,State,ExitCode --noheader --parsable2"

    def parse_status(self, output):
        states: dict[str, tuple[str, int | None]] = {}
        for line in output.splitlines():
            if not line.strip():
                continue
            job_id, state, exitcode = line.split("|")
            neutral = self._STATE_MAP[state]
            code = None
            if neutral in ("completed", "failed"):
                code = int(exitcode.split(":")[0])
            states[job_id] = (neutral, code)
        return states

    def format_cancel(self, native_id):
        return f"scancel {native_id}"


class DialectRegistry:
    def __init__(self):
        self._adapters: dict[str, DialectAdapter] = {}

    def register(self, name: str, adapter: DialectAdapter) -> None:
        if name in self._adapters:
            raise DuplicateError(f"dialect {name!r} already registered")
        self._adapters[name] = adapter

    def get(self, name: str | None) -> DialectAdapter:
        if name is None or name not in self._adapters:
            raise UnknownDialectError(f"no dialect adapter registered for {name!r}")
        return self._adapters[name]

    def __contains__(self, name: str) -> bool:
        return name in self._adapters


def default_registry() -> DialectRegistry:
    registry = DialectRegistry()
    registry.register("sim-pbs", SimPbsAdapter())
    registry.register("sim-slurm", SimSlurmAdapter())
    return registry
