from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from iab_sim.scheduler import (N_SLOTS, Bearer, BearerKind, FrameAllocation, Pipeline, build_frame,
                               frame_quotas, ue_key, validate_half_duplex)

ACC, BH = BearerKind.ACCESS, BearerKind.BACKHAUL
BIG = 1e12


def by_id(bearers):
    return {b.id: b for b in bearers}


def test_two_saturated_ues_split_evenly():
    bs = [Bearer(0, 0, 0, ACC, capacity_bps=1e9), Bearer(1, 0, 1, ACC, capacity_bps=1e9)]
    frame = build_frame(bs, {0: BIG, 1: BIG})
    assert frame.slot_counts() == {0: 40, 1: 40}
    assert frame.frame_us == 10_000


def test_saturated_chain_alternates():
    bs = [Bearer(0, 0, 1, BH, capacity_bps=1e9), Bearer(1, 1, 0, ACC, capacity_bps=1e9)]
    frame = build_frame(bs, {0: BIG, 1: BIG})
    assert frame.slot_counts() == {0: 40, 1: 40}
    assert all(len(s) == 1 for s in frame.slots)
    assert validate_half_duplex(frame, by_id(bs)) == []


def test_weighted_split_follows_downstream_population():
    bs = [Bearer(0, 0, 0, ACC, 1, 1e9), Bearer(1, 0, 5, BH, 2, 1e9)]
    for _ in range(30):
        counts = build_frame(bs, {0: BIG, 1: BIG}).slot_counts()
        assert abs(counts[0] - 80 / 3) <= 1
        assert abs(counts[1] - 160 / 3) <= 1


def test_long_run_share_is_exact_within_one_slot():
    bs = [Bearer(0, 0, 0, ACC, 1, 1e9), Bearer(1, 0, 5, BH, 2, 1e9)]
    total = {0: 0, 1: 0}
    frames = 300
    for _ in range(frames):
        for k, v in build_frame(bs, {0: BIG, 1: BIG}).slot_counts().items():
            total[k] += v
    assert abs(total[0] - frames * 80 / 3) < 1
    assert abs(total[1] - frames * 160 / 3) < 1


def test_empty_backlog_gives_empty_frame():
    bs = [Bearer(0, 0, 0, ACC, capacity_bps=1e9)]
    frame = build_frame(bs, {})
    assert all(s == () for s in frame.slots) and len(frame.slots) == N_SLOTS


def test_notional_backlog_limits_slots():
    # 1 Gbps, 125 us slots carry 15625 B each
    bs = [Bearer(0, 0, 0, ACC, capacity_bps=1e9)]
    assert build_frame(bs, {0: 3 * 15625}).slot_counts() == {0: 3}
    assert build_frame(bs, {0: 3 * 15625 + 1}).slot_counts() == {0: 4}


def test_pipeline_moves_backlog_to_next_hop_in_same_frame():
    bs = [Bearer(0, 0, 1, BH, capacity_bps=1e9), Bearer(1, 1, 7, ACC, capacity_bps=1e9)]
    pipe = Pipeline({0: deque([[7, 1400]])}, lambda b, ue: 1)
    frame = build_frame(bs, {0: 1400}, pipeline=pipe)
    assert frame.slots[0] == (0,)
    assert frame.slots[1] == (1,)
    assert frame.slot_counts() == {0: 1, 1: 1}


def test_validate_half_duplex_examples():
    bs = by_id([Bearer(0, 0, 1, BH), Bearer(1, 1, 2, BH), Bearer(2, 3, 4, BH)])
    assert validate_half_duplex(FrameAllocation([(0, 1)]), bs) == [(0, "g1")]
    assert validate_half_duplex(FrameAllocation([(0, 2)]), bs) == []


def test_frame_trace():
    bs = [Bearer(0, 0, 1, BH, capacity_bps=1e9), Bearer(1, 1, 3, ACC, capacity_bps=1e9)]
    frame = build_frame(bs, {0: 15625, 1: 15625}, n_slots=3)
    assert frame.trace(by_id(bs)) == "0 g0->g1\n1 g1->u3\n2 -\n"


def test_frame_quotas_round_by_residue():
    bs = [Bearer(0, 0, 0, ACC, 1), Bearer(1, 0, 1, ACC, 1), Bearer(2, 0, 2, ACC, 1)]
    seen = []
    for _ in range(3):
        q = frame_quotas(bs, 80)
        assert sum(q.values()) == 80 and set(q.values()) <= {26, 27}
        seen.append(q)
    assert [sum(q[i] for q in seen) for i in range(3)] == [80, 80, 80]


def test_ue_key_is_disjoint_from_gnb_ids():
    assert ue_key(0) == -1 and ue_key(5) == -6


@st.composite
def star_tree(draw):
    """Random small tree with access and backhaul bearers and random backlogs."""
    n_gnb = draw(st.integers(1, 6))
    parent = {g: draw(st.integers(0, g - 1)) for g in range(1, n_gnb)}
    bearers, ue = [], 0
    for g in range(n_gnb):
        for _ in range(draw(st.integers(0, 3))):
            bearers.append(Bearer(len(bearers), g, ue, ACC, 1, draw(st.sampled_from([2e8, 1e9, 2.9e9]))))
            ue += 1
    for c, p in parent.items():
        bearers.append(Bearer(len(bearers), p, c, BH, draw(st.integers(1, 8)), 2.9e9))
    backlog = {b.id: draw(st.sampled_from([0, 1400, 50_000, BIG])) for b in bearers}
    return bearers, backlog


@settings(max_examples=80, deadline=None)
@given(star_tree())
def test_frames_are_half_duplex_and_work_conserving(tree):
    bearers, backlog = tree
    frame = build_frame(bearers, backlog)
    assert validate_half_duplex(frame, by_id(bearers)) == []
    left = {b.id: float(backlog[b.id]) for b in bearers}
    for active in frame.slots:
        busy = set()
        for bid in active:
            b = by_id(bearers)[bid]
            busy |= {b.tx, b.rx_key}
        for b in bearers:
            if left[b.id] > 0 and b.id not in active:
                assert b.tx in busy or b.rx_key in busy
        for bid in active:
            b = by_id(bearers)[bid]
            left[bid] = max(0.0, left[bid] - b.capacity_bps * 125e-6 / 8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=8), st.integers(1, 40))
def test_weighted_share_within_one_slot_per_frame(weights, frames):
    # bearers sharing one transmitter, all saturated
    bs = [Bearer(i, 0, i + 1, BH, w, 1e9) for i, w in enumerate(weights)]
    total = sum(weights)
    for _ in range(frames):
        counts = build_frame(bs, {b.id: BIG for b in bs}).slot_counts()
        for b in bs:
            assert abs(counts.get(b.id, 0) - 80 * b.weight / total) < 1 + 1e-9


def test_memo_returns_identical_frames():
    bs = [Bearer(0, 0, 0, ACC, 1, 1e9), Bearer(1, 0, 5, BH, 2, 1e9), Bearer(2, 5, 1, ACC, 1, 1e9)]
    twin = [Bearer(b.id, b.tx, b.rx, b.kind, b.weight, b.capacity_bps) for b in bs]
    memo = {}
    for _ in range(20):
        a = build_frame(bs, {0: BIG, 1: BIG, 2: BIG}, memo=memo)
        b = build_frame(twin, {0: BIG, 1: BIG, 2: BIG})
        assert a.slots == b.slots
    assert memo
