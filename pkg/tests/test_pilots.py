import pytest

from talescale.errors import ValidationError
from talescale.middleware import JobSpec
from talescale.pilots import PoolPolicy, SlotState

from conftest import batch_world


def pool_world(min_warm=2, max_size=4, walltime=50_000.0, queue=None, **kw):
    return batch_world(
        queue=queue or {"distribution": "fixed", "params": {"value": 600.0}},
        pools=[{"resource": "hpc-1", "min_warm": min_warm, "max_size": max_size,
                "pilot_walltime_s": walltime}],
        **kw,
    )


def workload(command=("sleep", "30")):
    return JobSpec(resource="hpc-1", command=command, credential="user", tale_id="t1")


class TestConfigure:
    def test_min_warm_pilots_submitted(self):
        world = pool_world(min_warm=2)
        assert len(world.transport.calls(verb="submit")) == 2
        pilots = [c for c in world.transport.calls(verb="submit") if "pilot-shim" in c.payload]
        assert len(pilots) == 2

    def test_min_warm_zero_no_submissions(self):
        world = pool_world(min_warm=0)
        assert world.transport.calls(verb="submit") == []

    def test_max_size_below_min_warm_rejected(self):
        with pytest.raises(ValidationError):
            PoolPolicy(resource="hpc-1", min_warm=3, max_size=2)

    def test_replenish_threshold_above_min_warm_rejected(self):
        with pytest.raises(ValidationError):
            PoolPolicy(resource="hpc-1", min_warm=1, max_size=3, replenish_threshold=2)

    def test_pool_on_unknown_resource_rejected(self):
        from talescale.errors import ConfigError
        with pytest.raises(ConfigError, match="nowhere.*|pool"):
            batch_world(pools=[{"resource": "nowhere", "min_warm": 1}])


class TestClaim:
    def test_warm_claim_is_instant(self):
        world = pool_world()
        world.clock.run_until(700.0)  # pilots through the 600 s queue
        pool = world.pools["hpc-1"]
        assert pool.warm_count == 2
        before = world.clock.now
        slot = pool.claim(workload())
        assert slot is not None
        assert slot.state == SlotState.CLAIMED
        # start latency is dispatch overhead only, well under a second
        assert world.workload_latencies[-1] <= 1.0
        # only the replenish submission's transport cost elapsed
        assert world.clock.now - before <= 0.1

    def test_empty_pool_returns_none_and_fallback_waits(self):
        world = pool_world(min_warm=0)
        kind, handle = world.submit_workload(workload())
        assert kind == "lrm"
        world.clock.run_until(700.0)
        # direct submit experienced roughly the configured 600 s wait
        assert world.workload_latencies[-1] == pytest.approx(600.0, rel=0.02)

    def test_one_warm_slot_single_winner(self):
        world = pool_world(min_warm=1, max_size=1)
        world.clock.run_until(700.0)
        pool = world.pools["hpc-1"]
        first = pool.claim(workload())
        second = pool.claim(workload())
        assert first is not None
        assert second is None

    def test_resource_mismatch_rejected(self):
        world = pool_world()
        world.clock.run_until(700.0)
        with pytest.raises(ValidationError):
            world.pools["hpc-1"].claim(JobSpec(resource="elsewhere", command=("sleep", "1")))

    def test_oversized_workload_rejected(self):
        world = pool_world()
        world.clock.run_until(700.0)
        with pytest.raises(ValidationError, match="nodes"):
            world.pools["hpc-1"].claim(JobSpec(resource="hpc-1", command=("sleep", "1"),
                                               node_count=4))

    def test_slot_claimed_at_most_once(self):
        world = pool_world()
        world.clock.run_until(700.0)
        pool = world.pools["hpc-1"]
        slot = pool.claim(workload())
        claimed = [s for s in pool.slots if s.state == SlotState.CLAIMED]
        assert claimed == [slot]
        owner = slot.claimed_by
        world.clock.run_until(5000.0)
        # released after its single workload, never warm or re-claimed
        assert slot.state == SlotState.EXPIRED
        assert slot.claimed_by == owner

    def test_released_slot_frees_capacity(self):
        world = pool_world(min_warm=1, max_size=1,
                           queue={"distribution": "fixed", "params": {"value": 10.0}})
        pool = world.pools["hpc-1"]
        world.clock.run_until(20.0)
        assert pool.claim(workload(command=("sleep", "5"))) is not None
        assert pool.replenish() == []  # cap holds while the workload runs
        world.clock.run_until(100.0)  # workload done, slot released, pool refilled
        assert pool.counts()[SlotState.EXPIRED] == 1
        assert pool.counts()[SlotState.PENDING] + pool.warm_count >= 1


class TestReplenish:
    def test_refills_to_min_warm(self):
        world = pool_world(min_warm=2)
        pool = world.pools["hpc-1"]
        counts = pool.counts()
        assert counts[SlotState.PENDING] == 2
        assert pool.replenish() == []  # warm+pending already at min_warm

    def test_cap_blocks_submissions(self):
        world = pool_world(min_warm=2, max_size=2)
        pool = world.pools["hpc-1"]
        world.clock.run_until(700.0)
        pool.claim(workload())
        pool.claim(workload())
        # claimed slots still count against max_size
        assert pool.replenish() == []
        assert pool.nonexpired() == 2

    def test_claim_triggers_replenish(self):
        world = pool_world(min_warm=2, max_size=8)
        world.clock.run_until(700.0)
        pool = world.pools["hpc-1"]
        submits_before = len(world.transport.calls(verb="submit"))
        pool.claim(workload())
        assert len(world.transport.calls(verb="submit")) == submits_before + 1

    def test_submit_failure_recorded_and_retried(self):
        world = pool_world(min_warm=0)
        pool = world.pools["hpc-1"]
        object.__setattr__(pool.policy, "min_warm", 1)
        world.transport.inject_failure("transport", count=1)
        pool.replenish()
        assert pool.pending_retries == 1
        assert pool.counts()[SlotState.EXPIRED] == 1
        pool.replenish()  # retry succeeds
        assert pool.counts()[SlotState.PENDING] == 1


class TestExpire:
    def test_walltime_expiry_and_restoration(self):
        world = pool_world(min_warm=1, max_size=4, walltime=1000.0,
                           queue={"distribution": "fixed", "params": {"value": 10.0}})
        pool = world.pools["hpc-1"]
        world.clock.run_until(20.0)
        assert pool.warm_count == 1
        world.clock.run_until(2000.0)
        # trace oracle: an expiry happened and replenish restored min_warm
        kinds = [ev.kind for ev in world.trace]
        assert "pilot_expired" in kinds
        assert pool.warm_count >= 1

    def test_expire_is_age_based(self):
        world = pool_world(min_warm=1, walltime=100.0,
                           queue={"distribution": "fixed", "params": {"value": 10.0}})
        pool = world.pools["hpc-1"]
        world.clock.run_until(20.0)
        slot = next(s for s in pool.slots if s.state == SlotState.WARM)
        expired = pool.expire(now=slot.warmed_at + 101.0)
        assert slot in expired


class TestConservation:
    def test_slot_states_partition_all_pilots(self):
        world = pool_world(min_warm=2, max_size=6, walltime=800.0,
                           queue={"distribution": "exponential", "params": {"mean": 300.0}})
        pool = world.pools["hpc-1"]
        checkpoints = [500.0, 1500.0, 3000.0, 6000.0]
        for t in checkpoints:
            world.clock.run_until(t)
            if pool.warm_count:
                pool.claim(workload())
            counts = pool.counts()
            assert sum(counts.values()) == len(pool.slots)
            assert pool.nonexpired() <= pool.policy.max_size
