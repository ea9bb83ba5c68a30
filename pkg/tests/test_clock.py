import pytest

from talescale.clock import SimClock


def test_events_fire_in_time_then_insertion_order():
    clock = SimClock()
    fired = []
    clock.at(5.0, lambda: fired.append("b"))
    clock.at(1.0, lambda: fired.append("a"))
    clock.at(5.0, lambda: fired.append("c"))  # same time, later insertion
    clock.run_until(10.0)
    assert fired == ["a", "b", "c"]
    assert clock.now == 10.0


def test_run_until_is_inclusive_and_monotone():
    clock = SimClock()
    fired = []
    clock.at(5.0, lambda: fired.append(1))
    clock.run_until(5.0)
    assert fired == [1]
    clock.run_until(3.0)  # past horizon: no-op, time never decreases
    assert clock.now == 5.0


def test_cannot_schedule_in_the_past():
    clock = SimClock()
    clock.run_until(10.0)
    with pytest.raises(ValueError):
        clock.at(9.0, lambda: None)


def test_cancel_prevents_firing():
    clock = SimClock()
    fired = []
    handle = clock.at(1.0, lambda: fired.append(1))
    clock.cancel(handle)
    clock.run_until(2.0)
    assert fired == []
    assert handle.canceled


def test_consume_advances_only_in_driver_context():
    clock = SimClock()
    seen = {}

    def inside():
        clock.consume(100.0)  # no-op while dispatching
        seen["t"] = clock.now

    clock.at(1.0, inside)
    clock.consume(2.0)
    assert seen["t"] == 1.0
    assert clock.now == 2.0


def test_no_reentrant_advance():
    clock = SimClock()
    errors = []

    def inside():
        try:
            clock.run_until(50.0)
        except RuntimeError as exc:
            errors.append(exc)

    clock.at(1.0, inside)
    clock.run_until(2.0)
    assert len(errors) == 1


def test_events_scheduled_during_dispatch_run_in_same_pass():
    clock = SimClock()
    fired = []
    clock.at(1.0, lambda: clock.after(1.0, lambda: fired.append("child")))
    clock.run_until(3.0)
    assert fired == ["child"]


def test_step_processes_single_event():
    clock = SimClock()
    fired = []
    clock.at(1.0, lambda: fired.append(1))
    clock.at(2.0, lambda: fired.append(2))
    assert clock.step()
    assert fired == [1]
    assert clock.step()
    assert fired == [1, 2]
    assert not clock.step()
