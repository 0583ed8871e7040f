import pytest
from hypothesis import given, strategies as st

from qnet.policies import (Customer, FifoQueue, LifoQueue, PolicyKind, PriorityQueue,
                           RandomOrderQueue)
from qnet.scenarios import RoutedScenario
from qnet.streams import RandomStreams, Stream

from conftest import gallery


@given(st.integers(0, 2**32 - 1), st.integers(1, 300))
def test_stream_depends_only_on_seed_name_index(seed, n):
    a = Stream(seed, "route[2]")
    b = Stream(seed, "route[2]")
    xs = [a.next() for _ in range(n)]
    assert xs == [b.next() for _ in range(n)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert a.drawn == n


def test_buffering_does_not_change_values():
    a, b = Stream(5, "arrival"), Stream(5, "arrival")
    head = [a.next() for _ in range(70)]   # crosses the first block boundary
    assert head == [b.next() for _ in range(70)]


def test_streams_are_distinct():
    s = RandomStreams(1)
    assert s.arrival.next() != s.assign.next()
    assert s.route(0).next() != s.route(1).next()
    assert RandomStreams(1, key=(0,)).arrival.next() != RandomStreams(1, key=(1,)).arrival.next()
    assert s.service(3) is s.service(3)


def customers(*buffers):
    return [Customer(i, b, b, i) for i, b in enumerate(buffers)]


def test_fifo_lifo_order():
    f, l = FifoQueue(), LifoQueue()
    for c in customers(0, 1, 2):
        f.add(c)
        l.add(c)
    assert f.serving().id == 0 and l.serving().id == 2
    assert [f.pop_serving().id for _ in range(3)] == [0, 1, 2]
    assert [l.pop_serving().id for _ in range(3)] == [2, 1, 0]
    assert f.serving() is None and len(l) == 0


def test_priority_is_preemptive_and_fifo_within_buffer():
    q = PriorityQueue([1, 0])
    a, b, c = customers(0, 1, 1)
    q.add(a)
    assert q.serving() is a
    q.add(b)
    assert q.serving() is b
    q.add(c)
    assert [q.pop_serving() for _ in range(3)] == [b, c, a]
    with pytest.raises(ValueError):
        q.add(Customer(9, 5, 5, 0))


def test_random_order_is_non_preemptive_and_seeded():
    def order(seed):
        q = RandomOrderQueue(Stream(seed, "policy"))
        for c in customers(*range(6)):
            q.add(c)
        assert q.serving().id == 0
        return [q.pop_serving().id for _ in range(6)]
    assert order(1) == order(1)
    assert sorted(order(1)) == list(range(6))
    assert len({tuple(order(s)) for s in range(10)}) > 1


@pytest.mark.parametrize("text, expected", [
    ("fifo", "fifo"), ("LIFO", "lifo"), ("priority:2,0,1", "priority:2,0,1"),
    ("priority:1,0/0,1", "priority:1,0/0,1"), ("random", "random")])
def test_policy_parse_round_trip(text, expected):
    assert str(PolicyKind.parse(text)) == expected


def test_policy_unknown():
    with pytest.raises(ValueError):
        PolicyKind.parse("srpt")


def test_priority_queue_completes_order():
    q = PolicyKind.parse("priority:2").make_queue(3, None)
    assert isinstance(q, PriorityQueue) and q._order == (2, 0, 1)


def test_scenario_structure():
    scen = gallery("rybko_stolyar_demo")
    assert scen.buffers() == [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)]
    assert scen.station_loads().tolist() == pytest.approx([0.7, 0.7])
    assert str(scen.policy_kind()) == "priority:1,3,0,2"
    spec, policy = scen.class_independent_analogue()
    assert spec.routing.tolist() == [[0.0, 0.5], [0.5, 0.0]]
    assert str(policy) == "priority:1,0/0,1"
    assert RoutedScenario.from_dict(scen.to_dict()) == scen


def test_scenario_validation():
    with pytest.raises(ValueError):
        RoutedScenario(2, [1.0], [[0, 2]], [[0.1, 0.2]])
    with pytest.raises(ValueError):
        RoutedScenario.from_dict({"num_servers": 1})
