import pytest
from hypothesis import given, strategies as st

from iab_sim.engine import US_PER_S, Engine, SchedulingError, seconds, to_seconds


def test_earlier_event_fires_first():
    eng, log = Engine(), []
    eng.schedule(5, log.append, "t5")
    eng.schedule(3, log.append, "t3")
    eng.run_until(10)
    assert log == ["t3", "t5"]


def test_same_time_events_fire_in_scheduling_order():
    eng, log = Engine(), []
    eng.schedule(7, log.append, "A")
    eng.schedule(7, log.append, "B")
    eng.run_until(7)
    assert log == ["A", "B"]


def test_event_at_now_runs_after_queued_same_time_events():
    eng, log = Engine(), []

    def first():
        log.append("first")
        eng.schedule(eng.now(), log.append, "late")

    eng.schedule(4, first)
    eng.schedule(4, log.append, "queued")
    eng.run_until(4)
    assert log == ["first", "queued", "late"]


def test_empty_run_advances_clock():
    eng = Engine()
    stats = eng.run_until(seconds(10))
    assert stats.events == 0
    assert eng.now() == 10 * US_PER_S
    assert stats.final_time == 10 * US_PER_S


def test_event_beyond_horizon_not_processed():
    eng, log = Engine(), []
    eng.schedule(seconds(1), log.append, 1)
    assert eng.run_until(seconds(0.5)).events == 0
    assert log == [] and eng.pending() == 1


def test_periodic_tick_count():
    eng = Engine()
    fired = []

    def tick():
        fired.append(eng.now())
        eng.schedule_in(1000, tick)

    eng.schedule(1000, tick)
    eng.run_until(seconds(1))
    assert len(fired) == 1000


def test_scheduling_in_the_past_is_an_error():
    eng = Engine()
    eng.run_until(100)
    with pytest.raises(SchedulingError):
        eng.schedule(99, lambda: None)


def test_cancelled_event_is_skipped():
    eng, log = Engine(), []
    ev = eng.schedule(5, log.append, "x")
    ev.cancel()
    assert eng.run_until(10).events == 0
    assert log == []


def test_time_conversions():
    assert seconds(0.000125) == 125
    assert to_seconds(2_500_000) == 2.5


@given(st.lists(st.integers(min_value=0, max_value=1000), min_size=1, max_size=60))
def test_fire_order_is_time_then_sequence(times):
    eng, log = Engine(), []
    for i, t in enumerate(times):
        eng.schedule(t, lambda i=i: log.append((eng.now(), i)))
    eng.run_until(1000)
    assert log == sorted((t, i) for i, t in enumerate(times))
    clock = [t for t, _ in log]
    assert clock == sorted(clock)
