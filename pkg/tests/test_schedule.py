import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyshuffle.exchange import FLAG_SYNC, SYNC_OPERATOR_ID, decode_frame
from hyshuffle.schedule import (
    SYNC_FRAME_SIZE,
    PhaseState,
    SyncPolicy,
    advance_phase,
    amortization_curve,
    decode_sync,
    encode_sync,
    round_robin_schedule,
    validate_schedule,
)
from hyshuffle.transport.sim import Transfer, all_to_all, sim_run


def brute_force_valid(schedule):
    n = schedule.n
    pairs = []
    for phase in schedule.phases:
        assert sorted(phase) == list(range(n))  # one source and one target per node
        assert all(i != j for i, j in enumerate(phase))
        pairs += list(enumerate(phase))
    assert sorted(pairs) == sorted((i, j) for i in range(n) for j in range(n) if i != j)


def test_every_size_up_to_64():
    for n in range(2, 65):
        s = round_robin_schedule(n)
        assert len(s) == n - 1
        brute_force_valid(s)
        validate_schedule(s)


def test_four_servers_three_phases():
    s = round_robin_schedule(4)
    assert len(s) == 3
    assert s.pairs(0) == [(0, 1), (1, 2), (2, 3), (3, 0)]
    assert s.pairs(1) == [(0, 2), (1, 3), (2, 0), (3, 1)]
    assert s.pairs(2) == [(0, 3), (1, 0), (2, 1), (3, 2)]


def test_two_servers_and_errors():
    assert round_robin_schedule(2).phases == ((1, 0),)
    with pytest.raises(ValueError):
        round_robin_schedule(1)
    with pytest.raises(ValueError):
        SyncPolicy(messages_per_step=0)


def test_sync_frame_wire_form():
    f = encode_sync(7, False)
    op, flags, payload = decode_frame(f)
    assert (op, flags, bytes(payload)) == (SYNC_OPERATOR_ID, FLAG_SYNC, b"\x07\x00\x00\x00")
    assert len(f) == SYNC_FRAME_SIZE == 13
    assert decode_sync(encode_sync(3, True)) == (3, True)


def test_barrier_needs_every_peer():
    ph = PhaseState(0, 3)
    ph.issue_sync(False)
    ph.on_sync(1, 0, False)
    assert not ph.barrier_ready() and ph.missing_peers() == [2]
    with pytest.raises(RuntimeError):
        ph.advance()
    assert advance_phase(ph, {2: False}) == 1 and ph.target == 2


def test_done_only_when_all_agree():
    ph = PhaseState(1, 2)
    ph.issue_sync(True)
    assert advance_phase(ph, {0: False}) == 0 and not ph.finished
    ph.issue_sync(True)
    assert advance_phase(ph, {0: True}) is None and ph.finished


def test_amortization_examples():
    bw = 4e9
    assert amortization_curve(512 * 1024, 1e-6, bw, 8) >= 0.999 * bw
    assert amortization_curve(1024, 1e-6, bw, 8) < 0.75 * bw
    assert amortization_curve(1e15, 1e-6, bw, 8) == pytest.approx(bw)
    with pytest.raises(ValueError):
        amortization_curve(0, 1e-6, bw, 8)


@given(st.floats(1, 1e9), st.floats(1, 1e9), st.floats(0, 1e-3), st.integers(1, 32))
def test_amortization_monotone(a, b, lat, step):
    lo, hi = sorted((a, b))
    assert amortization_curve(lo, lat, 4e9, step) <= amortization_curve(hi, lat, 4e9, step) * (1 + 1e-12)


# -- protocol in the simulator -----------------------------------------------------


def test_two_nodes_sixteen_messages_two_sync_rounds():
    r = sim_run(all_to_all(2, 16, 4096), round_robin_schedule(2))
    assert r.sync_counts == [2, 2]
    assert [e.message for e in r.events if e.kind == "sync" and e.sender == 0] == [0, 1]


def test_idle_node_still_joins_barriers():
    r = sim_run([Transfer(0, 1, 20, 1000)], round_robin_schedule(3))
    assert r.sync_counts[1] == r.sync_counts[2] == r.sync_counts[0] > 0
    assert r.bytes_received == [0, 20_000, 0]


def test_heterogeneous_queues_terminate():
    work = [Transfer(0, 1, 30, 100), Transfer(2, 3, 3, 100), Transfer(3, 0, 9, 100), Transfer(1, 2, 1, 50)]
    r = sim_run(work, round_robin_schedule(4))
    assert r.steps >= math.ceil(30 / 8)
    assert r.bytes_received == [900, 3000, 50, 300]


# -- liveness by exhaustive interleaving ------------------------------------------


def explore(queues, step_budget):
    """Depth-first search over every delivery order of sync frames.

    ``queues[i][j]`` is how many messages node i still has for node j. Each
    node runs the same loop as the multiplexer: send up to the budget to the
    phase target, issue its sync, advance when all peers' syncs arrived.
    """
    n = len(queues)
    seen = set()

    def key(states, pending, q):
        return (tuple((s.step, s.sent_in_step, s.sync_issued, s.finished, tuple(sorted(
            (st, tuple(sorted(a.items()))) for st, a in s._acks.items()))) for s in states), pending, q)

    def clone(states):
        out = []
        for s in states:
            c = PhaseState(s.node, n, s.policy)
            c.step, c.sent_in_step, c.sync_issued, c.finished = s.step, s.sent_in_step, s.sync_issued, s.finished
            c._acks = {k: dict(v) for k, v in s._acks.items()}
            c._local_done = dict(s._local_done)
            out.append(c)
        return out

    terminal_steps = set()

    def dfs(states, pending, q):
        k = key(states, pending, q)
        if k in seen:
            return
        seen.add(k)
        moved = False
        for i, s in enumerate(states):
            if s.finished:
                continue
            if not s.sync_issued:
                ns, nq = clone(states), [list(r) for r in q]
                me = ns[i]
                while me.can_send() and nq[i][me.target]:
                    nq[i][me.target] -= 1
                    me.record_send()
                done = not any(nq[i])
                me.issue_sync(done)
                frames = pending + tuple((i, j, me.step, done) for j in me.peers)
                dfs(ns, frames, tuple(tuple(r) for r in nq))
                moved = True
            elif s.barrier_ready():
                ns = clone(states)
                ns[i].advance()
                dfs(ns, pending, q)
                moved = True
        for idx, (src, dst, step, done) in enumerate(pending):
            # frames between one pair arrive in order
            if any(p[0] == src and p[1] == dst for p in pending[:idx]):
                continue
            ns = clone(states)
            ns[dst].on_sync(src, step, done)
            dfs(ns, pending[:idx] + pending[idx + 1:], q)
            moved = True
        if not moved:
            assert all(s.finished for s in states), "deadlock"
            assert not any(any(r) for r in q), "finished with queued messages"
            assert not pending
            terminal_steps.add(tuple(s.step for s in states))

    dfs([PhaseState(i, n, SyncPolicy(step_budget)) for i in range(n)], (), tuple(tuple(r) for r in queues))
    return terminal_steps


@pytest.mark.parametrize("queues", [
    [[0, 2], [0, 0]],
    [[0, 1, 0], [0, 0, 3], [1, 0, 0]],
    [[0, 0, 0], [0, 0, 0], [0, 0, 0]],
    [[0, 3, 1], [2, 0, 0], [0, 0, 0]],
])
def test_protocol_terminates_under_every_interleaving(queues):
    steps = explore(queues, step_budget=2)
    assert len(steps) == 1  # same outcome for every order
    (final,) = steps
    assert len(set(final)) == 1  # all nodes leave at the same step
