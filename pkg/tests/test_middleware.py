import statistics

import pytest

from talescale.dialects import SimSlurmAdapter
from talescale.errors import (
    SessionError,
    UnknownCredentialError,
    UnknownDialectError,
    UnknownJobError,
    UnknownResourceError,
    ValidationError,
)
from talescale.middleware import JobSpec, JobState, LEGAL_TRANSITIONS, TERMINAL_STATES

from conftest import batch_world


def spec(resource="hpc-1", command=("sleep", "30"), credential="user", **kw):
    return JobSpec(resource=resource, command=command, credential=credential, **kw)


class TestSubmit:
    def test_submit_returns_submitted_then_queued_on_next_cycle(self):
        world = batch_world()
        handle = world.middleware.submit(spec())
        assert world.middleware.status(handle).state == JobState.SUBMITTED
        world.clock.run_until(5.0)
        assert world.middleware.status(handle).state == JobState.QUEUED

    def test_mpi_to_non_mpi_resource_rejected(self):
        world = batch_world()
        with pytest.raises(ValidationError, match="MPI"):
            world.middleware.submit(spec(mpi=True))

    def test_unknown_resource_rejected(self):
        world = batch_world()
        with pytest.raises(UnknownResourceError):
            world.middleware.submit(spec(resource="nowhere"))

    def test_unknown_credential_rejected(self):
        world = batch_world()
        with pytest.raises(UnknownCredentialError):
            world.middleware.submit(spec(credential="nobody"))

    def test_too_many_nodes_rejected(self):
        world = batch_world()
        with pytest.raises(ValidationError, match="nodes"):
            world.middleware.submit(spec(node_count=100))

    def test_many_submits_get_distinct_ids(self):
        world = batch_world()
        ids = {world.middleware.submit(spec()).job_id for _ in range(500)}
        assert len(ids) == 500

    def test_submit_latency_independent_of_queue_wait(self):
        # instrumented clock oracle: compare return-time deltas under
        # queue-wait means of 1 s and 10,000 s
        medians = []
        for mean in (1.0, 10_000.0):
            world = batch_world(queue={"distribution": "exponential", "params": {"mean": mean}})
            latencies = []
            for _ in range(100):
                before = world.clock.now
                world.middleware.submit(spec())
                latencies.append(world.clock.now - before)
            medians.append(statistics.median(latencies))
        assert medians[0] > 0
        assert abs(medians[0] - medians[1]) / max(medians) < 0.10


class TestStatus:
    def test_status_is_local_only(self):
        world = batch_world()
        handle = world.middleware.submit(spec())
        world.clock.run_until(7.0)
        before = len(world.transport.log)
        for _ in range(1000):
            world.middleware.status(handle)
        assert len(world.transport.log) == before

    def test_unknown_handle_rejected(self):
        world = batch_world()
        with pytest.raises(UnknownJobError):
            world.middleware.status("j999999")

    def test_completed_state_carries_exit_code(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 10.0}})
        handle = world.middleware.submit(spec(command=("sleep", "5")))
        world.clock.run_until(30.0)
        status = world.middleware.status(handle)
        assert status.state == JobState.COMPLETED
        assert status.exit_code == 0

    def test_failing_command_reports_failure(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        handle = world.middleware.submit(spec(command=("fail", "2", "3")))
        world.clock.run_until(20.0)
        status = world.middleware.status(handle)
        assert status.state == JobState.FAILED
        assert status.exit_code == 3


class TestPolling:
    def test_hundred_jobs_one_query_per_cycle(self):
        world = batch_world()
        for _ in range(100):
            world.middleware.submit(spec())
        before = world.transport.query_count("hpc-1")
        world.middleware.poll_cycle("hpc-1")
        assert world.transport.query_count("hpc-1") == before + 1

    def test_no_jobs_no_query(self):
        world = batch_world()
        assert world.middleware.poll_cycle("hpc-1") == []
        assert world.transport.query_count("hpc-1") == 0

    def test_four_resources_twelve_cycles_each(self):
        resources = [
            {"name": f"hpc-{i}", "kind": "hpc_cluster", "lrm": "batch",
             "allows_incoming_connections": False, "node_count": 4, "queue": "q"}
            for i in range(4)
        ]
        world = batch_world(resources=resources,
                            queue={"distribution": "fixed", "params": {"value": 10_000.0}})
        for i in range(4):
            world.middleware.submit(spec(resource=f"hpc-{i}"))
        world.clock.run_until(60.0)
        counts = [world.transport.query_count(f"hpc-{i}") for i in range(4)]
        assert counts == [12, 12, 12, 12]

    def test_transport_failure_defers_transitions(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        handle = world.middleware.submit(spec())
        world.transport.inject_failure("transport", count=1)
        world.clock.run_until(5.0)  # this cycle fails
        assert world.middleware.status(handle).state == JobState.SUBMITTED
        assert world.middleware.poll_failures == 1
        world.clock.run_until(10.0)  # retried next cycle
        assert world.middleware.status(handle).state in (JobState.QUEUED, JobState.RUNNING)

    def test_poller_stops_when_jobs_terminal(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        world.middleware.submit(spec(command=("sleep", "2")))
        assert world.middleware.active_pollers == 1
        world.clock.run_until(60.0)
        assert world.middleware.active_pollers == 0


class TestSubscribe:
    def test_full_lifecycle_replay(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 6.0}})
        handle = world.middleware.submit(spec(command=("sleep", "4")))
        sub = world.middleware.subscribe(handle)
        world.clock.run_until(30.0)
        states = [s for s, _ in sub.drain()]
        assert states == [JobState.QUEUED, JobState.RUNNING, JobState.COMPLETED]

    def test_two_subscribers_see_identical_sequences(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 6.0}})
        handle = world.middleware.submit(spec(command=("sleep", "4")))
        sub_a = world.middleware.subscribe(handle)
        sub_b = world.middleware.subscribe(handle)
        world.clock.run_until(30.0)
        assert sub_a.drain() == sub_b.drain()

    def test_terminal_job_yields_terminal_then_ends(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        handle = world.middleware.submit(spec(command=("sleep", "1")))
        world.clock.run_until(30.0)
        sub = world.middleware.subscribe(handle)
        events = sub.drain()
        assert [s for s, _ in events] == [JobState.COMPLETED]
        assert sub.closed

    def test_subscriber_count_does_not_change_poller_count(self):
        world = batch_world()
        handle = world.middleware.submit(spec())
        subs = [world.middleware.subscribe(handle) for _ in range(1000)]
        assert world.middleware.active_pollers == 1
        assert len(subs) == 1000


class TestCancel:
    def test_cancel_queued_job(self):
        world = batch_world()
        handle = world.middleware.submit(spec())
        world.clock.run_until(5.0)
        ack = world.middleware.cancel(handle)
        assert not ack.noop
        world.clock.run_until(10.0)
        assert world.middleware.status(handle).state == JobState.CANCELED

    def test_cancel_terminal_is_idempotent_noop(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        handle = world.middleware.submit(spec(command=("sleep", "1")))
        world.clock.run_until(30.0)
        assert world.middleware.status(handle).state == JobState.COMPLETED
        ack = world.middleware.cancel(handle)
        assert ack.noop
        assert world.middleware.status(handle).state == JobState.COMPLETED

    def test_cancel_running_job(self):
        world = batch_world(queue={"distribution": "fixed", "params": {"value": 1.0}})
        handle = world.middleware.submit(spec(command=("sleep", "1000")))
        world.clock.run_until(10.0)
        assert world.middleware.status(handle).state == JobState.RUNNING
        world.middleware.cancel(handle)
        world.clock.run_until(20.0)
        assert world.middleware.status(handle).state == JobState.CANCELED


class TestSessions:
    def test_session_frugality_three_pairs(self):
        resources = [
            {"name": f"hpc-{i}", "kind": "hpc_cluster", "lrm": "batch",
             "allows_incoming_connections": False, "node_count": 4, "queue": "q"}
            for i in range(2)
        ]
        world = batch_world(
            resources=resources,
            queue={"distribution": "fixed", "params": {"value": 100_000.0}},
            scenario={"idle_ttl_s": None, "credentials": ["alice", "bob"]},
        )
        pairs = [("hpc-0", "alice"), ("hpc-0", "bob"), ("hpc-1", "alice")]
        for i in range(500):
            resource, credential = pairs[i % 3]
            world.middleware.submit(spec(resource=resource, credential=credential))
        assert world.transport.handshake_count == 3

    def test_idle_ttl_forces_rehandshake(self):
        # Operations spaced beyond the TTL re-handshake every time; note a
        # live poller would keep the session warm, so there are no jobs here.
        world = batch_world(scenario={"idle_ttl_s": 10.0})
        ops = 6
        for _ in range(ops):
            world.middleware.acquire_session("hpc-1", "user")
            world.clock.advance(15.0)
        assert world.transport.handshake_count == ops

    def test_polling_keeps_a_session_warm(self):
        world = batch_world(
            queue={"distribution": "fixed", "params": {"value": 100_000.0}},
            scenario={"idle_ttl_s": 10.0},
        )
        world.middleware.submit(spec())
        world.clock.run_until(100.0)  # polls every 5 s reuse the session
        assert world.transport.handshake_count == 1

    def test_distinct_credentials_distinct_sessions(self):
        world = batch_world(scenario={"credentials": ["alice", "bob"]})
        world.middleware.acquire_session("hpc-1", "alice")
        world.middleware.acquire_session("hpc-1", "bob")
        assert world.transport.handshake_count == 2
        assert world.transport.live_sessions() == 2

    def test_handshake_failure_fails_submit_with_cause_and_backoff(self):
        world = batch_world()
        world.transport.inject_failure("handshake", count=1)
        handle = world.middleware.submit(spec())
        status = world.middleware.status(handle)
        assert status.state == JobState.FAILED
        assert "handshake" in status.cause
        with pytest.raises(SessionError, match="backoff"):
            world.middleware.acquire_session("hpc-1", "user")
        world.clock.advance(31.0)  # backoff over
        world.middleware.acquire_session("hpc-1", "user")


class TestDialects:
    def test_pbs_command_strings_in_transport_log(self):
        world = batch_world()
        world.middleware.submit(spec(command=("sleep", "30")))
        submit_calls = world.transport.calls(verb="submit")
        assert submit_calls[0].payload == "qsub -l nodes=1 -N j000001 -- sleep 30"
        world.clock.run_until(5.0)
        status_calls = world.transport.calls(verb="batch_status")
        assert status_calls[0].payload == "qstat -f 1.hpc-1"

    def test_slurm_dialect_coexists_and_routes_by_resource(self):
        resources = [
            {"name": "pbs-1", "kind": "hpc_cluster", "lrm": "batch",
             "allows_incoming_connections": False, "queue": "q", "dialect": "sim-pbs"},
            {"name": "slurm-1", "kind": "hpc_cluster", "lrm": "batch",
             "allows_incoming_connections": False, "queue": "q", "dialect": "sim-slurm"},
        ]
        world = batch_world(resources=resources,
                            queue={"distribution": "fixed", "params": {"value": 2.0}})
        h1 = world.middleware.submit(spec(resource="pbs-1"))
        h2 = world.middleware.submit(spec(resource="slurm-1"))
        payloads = {c.resource: c.payload for c in world.transport.calls(verb="submit")}
        assert payloads["pbs-1"].startswith("qsub ")
        assert payloads["slurm-1"].startswith("sbatch ")
        world.clock.run_until(40.0)
        assert world.middleware.status(h1).state == JobState.COMPLETED
        assert world.middleware.status(h2).state == JobState.COMPLETED

    def test_unregistered_dialect_error_names_it(self):
        world = batch_world(resources=[
            {"name": "odd-1", "kind": "hpc_cluster", "lrm": "batch",
             "allows_incoming_connections": False, "queue": "q", "dialect": "sim-lsf"},
        ])
        with pytest.raises(UnknownDialectError, match="sim-lsf"):
            world.middleware.submit(spec(resource="odd-1"))

    def test_duplicate_dialect_registration_rejected(self):
        from talescale.errors import DuplicateError
        world = batch_world()
        with pytest.raises(DuplicateError):
            world.middleware.register_dialect("sim-slurm", SimSlurmAdapter())


class TestStateMachine:
    def test_observed_transitions_are_legal(self):
        world = batch_world(queue={"distribution": "exponential", "params": {"mean": 5.0}})
        handles = [world.middleware.submit(spec(command=("sleep", "3"))) for _ in range(50)]
        world.clock.run_until(200.0)
        for handle in handles:
            transitions = world.middleware.status(handle).transitions
            for (a, _), (b, _) in zip(transitions, transitions[1:]):
                assert b in LEGAL_TRANSITIONS[a], f"illegal {a} -> {b}"
            assert transitions[-1][0] in TERMINAL_STATES
