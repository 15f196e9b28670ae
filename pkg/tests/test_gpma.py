import numpy as np
import pytest

from oracles import BinOracle
from pictile.domain import GridSpec, ParticleSoA, WorkloadConfig, advance, make_workload
from pictile.errors import GpmaError
from pictile.gpma import (INVALID, InsertOutcome, PendingMove, apply_pending_moves,
                          bin_capacity, counting_sort_order, detect_moves, global_sort,
                          gpma_build, gpma_delete, gpma_insert, gpma_rebuild, incremental_sort,
                          iterate_cell, pending_for_new)
from pictile.resort import RankSortStats


def _particles_in(cells, grid):
    """One particle at the centre of each listed cell."""
    i, j, k = grid.unravel(np.asarray(cells))
    pos = np.stack([i + 0.5, j + 0.5, k + 0.5], axis=1)
    return ParticleSoA.from_arrays(pos, np.zeros_like(pos))


def test_sentinel_is_max_id():
    assert INVALID == np.iinfo(np.int64).max


def test_counting_sort_is_stable():
    keys = np.array([2, 0, 2, 1, 0])
    order, counts = counting_sort_order(keys, 3)
    assert order.tolist() == [1, 4, 3, 0, 2]
    assert counts.tolist() == [2, 1, 2]


def test_build_empty():
    g = GridSpec.cubic(2)
    gp = gpma_build(ParticleSoA.empty(), g, min_gap=2)
    assert gp.capacity == g.n_cells * 2
    assert gp.num_particles == 0 and gp.bin_lengths.sum() == 0
    gp.validate()


def test_build_one_per_cell():
    g = GridSpec.cubic(2)
    p = _particles_in(range(8)[::-1], g)
    gp = gpma_build(p, g, gap_ratio=0.25, min_gap=1)
    caps = np.diff(gp.bin_offsets)
    assert np.all(gp.bin_lengths == 1) and np.all(caps - gp.bin_lengths >= 1)
    assert sorted(np.concatenate([iterate_cell(gp, c) for c in range(8)]).tolist()) == list(range(8))
    # data was physically reordered by cell
    assert np.array_equal(p.cells(g), np.arange(8))
    gp.validate(p, g)


def test_bin_capacity_formula():
    assert bin_capacity(64, 0.25, 2) == 82
    assert bin_capacity(0, 0.25, 2) == 2
    assert bin_capacity(3, 0.25, 0) == 4


def test_build_recovers_multiset_and_sorts():
    g = GridSpec.cubic(4)
    p = make_workload(WorkloadConfig(g, ppc=5, seed=2, kind="drift"))
    advance(p, 0.5, g)
    ids = np.sort(p.id)
    gp = gpma_build(p, g)
    pos, cells = gp.sorted_view()
    assert np.array_equal(np.sort(p.id[pos]), ids)
    assert np.all(np.diff(cells) >= 0)
    assert np.array_equal(pos, np.arange(p.count))
    gp.validate(p, g)


def test_delete_only_particle():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([3], g), g)
    slot = int(gp.slot_of[0])
    gpma_delete(gp, slot)
    assert gp.bin_lengths[3] == 0 and gp.local_index[slot] == INVALID
    gp.validate()
    with pytest.raises(GpmaError):
        gpma_delete(gp, slot)


def test_delete_reinsert_round_trip():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([1, 1, 2], g), g)
    gpma_delete(gp, int(gp.slot_of[0]))
    assert gpma_insert(gp, 0, 1).outcome is InsertOutcome.PLACED
    assert sorted(iterate_cell(gp, 1).tolist()) == [0, 1]
    gp.validate()


def test_random_deletes_vs_oracle():
    rng = np.random.default_rng(0)
    g = GridSpec.cubic(4)
    cells = rng.integers(0, g.n_cells, 1500)
    p = _particles_in(cells, g)
    gp = gpma_build(p, g)
    live = set(range(p.count))
    for slot in rng.permutation(np.flatnonzero(gp.local_index != INVALID))[:1000]:
        live.discard(int(gp.local_index[slot]))
        gpma_delete(gp, int(slot))
    gp.validate()
    assert set(gp.local_index[gp.local_index != INVALID].tolist()) == live


def test_insert_with_gap_pops_stack():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([0, 0], g), g)
    before = len(gp.empty_slots_stack)
    res = gpma_insert(gp, 2, 0)
    assert res.outcome is InsertOutcome.PLACED and res.shift_count == 0
    assert len(gp.empty_slots_stack) == before - 1
    assert iterate_cell(gp, 0).tolist() == [0, 1, 2]


def test_insert_borrow_shifts_three():
    g = GridSpec.cubic(2)
    p = _particles_in([0, 0, 1, 1, 1, 1], g)
    gp = gpma_build(p, g, gap_ratio=0.0, min_gap=0)
    # bin 0 = [0, 1] (full); bin 1 = [2, 3, 4, _] after deleting its last particle
    gpma_delete(gp, int(gp.slot_of[5]))
    res = gpma_insert(gp, 6, 0)
    assert res.outcome is InsertOutcome.PLACED_WITH_BORROW and res.shift_count == 3
    assert iterate_cell(gp, 0).tolist() == [0, 1, 6]
    assert iterate_cell(gp, 1).tolist() == [2, 3, 4]
    assert gp.local_index[:6].tolist() == [0, 1, 6, 2, 3, 4]
    gp.validate()


def test_borrow_respects_scan_limit():
    g = GridSpec(8, 1, 1)
    p = _particles_in([0, 7, 7], g)
    gp = gpma_build(p, g, gap_ratio=0.0, min_gap=0, scan_limit=4)
    gpma_delete(gp, int(gp.slot_of[2]))  # the only hole is six bins away
    res = gpma_insert(gp, 3, 0)
    assert res.outcome is InsertOutcome.OVERFLOWED
    assert gp.overflow_list == [PendingMove(3, 0)]
    gp.validate()


def test_overflow_when_exhausted():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([0], g), g, gap_ratio=0.0, min_gap=0)
    assert gpma_insert(gp, 1, 7).outcome is InsertOutcome.OVERFLOWED
    assert len(gp.overflow_list) == 1
    assert 1 in gp.members()[7]
    with pytest.raises(GpmaError):
        gpma_insert(gp, 1, 3)
    with pytest.raises(GpmaError):
        gpma_insert(gp, 0, 3)


def test_rebuild_restores_gaps_and_drains_overflow():
    rng = np.random.default_rng(3)
    g = GridSpec.cubic(4)
    p = _particles_in(rng.integers(0, g.n_cells, 400), g)
    gp = gpma_build(p, g)
    members = [sorted(m) for m in gp.members()]
    gpma_rebuild(gp)
    assert [sorted(m) for m in gp.members()] == members
    assert gp.was_rebuilt_this_step and gp.rebuild_count == 1

    # invalidate half, then rebuild: gap target restored for the survivors
    for pid in range(0, 400, 2):
        gp.delete_particle(pid)
    gpma_rebuild(gp)
    target = bin_capacity(gp.bin_lengths, gp.gap_ratio, gp.min_gap)
    assert np.array_equal(np.diff(gp.bin_offsets), target)
    assert gp.num_empty_slots == int((target - gp.bin_lengths).sum())
    once = [sorted(m) for m in gp.members()]
    gpma_rebuild(gp)
    assert [sorted(m) for m in gp.members()] == once
    gp.validate()

    tiny = gpma_build(_particles_in([0], g), g, gap_ratio=0.0, min_gap=0)
    tiny.insert(1, 5)
    tiny.rebuild()
    assert not tiny.overflow_list and iterate_cell(tiny, 5).tolist() == [1]
    tiny.validate()


def test_detect_moves_none_and_single():
    g = GridSpec.cubic(4)
    p = _particles_in([5, 9], g)
    gp = gpma_build(p, g)
    snap = gp.local_index.copy()
    assert detect_moves(gp, p, g) == []
    assert np.array_equal(gp.local_index, snap)

    pid = int(np.flatnonzero(p.cells(g) == 5)[0])
    old_slot = int(gp.slot_of[pid])
    p.x[pid] += 1.0
    pending = detect_moves(gp, p, g)
    assert pending == [PendingMove(pid, 6)]
    assert gp.local_index[old_slot] == INVALID


def test_pending_fraction_matches_advance():
    g = GridSpec.cubic(6)
    cfg = WorkloadConfig(g, ppc=8, kind="drift", seed=4)
    p = make_workload(cfg)
    gp = gpma_build(p, g)
    frac = advance(p, cfg.dt, g)
    assert len(detect_moves(gp, p, g)) == round(frac * p.count)


def test_apply_empty_pending_is_noop():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([0, 1], g), g)
    stats = RankSortStats()
    report = apply_pending_moves(gp, [], stats)
    assert report.inserts == 0 and not report.rebuilt and stats.cumulative_local_rebuilds == 0


def test_mandatory_rebuild_on_overflow_with_low_slots():
    g = GridSpec(2, 1, 1)
    p = _particles_in([0] * 20 + [1] * 20, g)
    gp = gpma_build(p, g, gap_ratio=0.0, min_gap=1)
    assert gp.empty_slot_ratio < gp.empty_threshold
    stats = RankSortStats()
    pending = pending_for_new([40, 41], [1, 1])
    report = apply_pending_moves(gp, pending, stats)
    assert report.overflowed == 1 and report.rebuilt
    assert report.rebuild_reason == "overflow_low_slots"
    assert stats.cumulative_local_rebuilds == 1 and pending == []
    assert sorted(iterate_cell(gp, 1).tolist()) == list(range(20, 40)) + [40, 41]
    gp.validate()


def test_overflow_deferred_when_slots_plentiful():
    g = GridSpec(8, 1, 1)
    gp = gpma_build(_particles_in([7] * 20, g), g, gap_ratio=0.0, min_gap=0)
    for pid in range(10):
        gp.delete_particle(pid)
    # free slots exist, but only in bin 7, beyond bin 0's scan window
    assert gp.empty_slot_ratio == 0.5
    report = apply_pending_moves(gp, [PendingMove(20, 0)])
    assert report.overflowed == 1 and not report.rebuilt
    assert gp.members()[0] == [20]
    gp.validate()


def test_overflow_limit_forces_rebuild():
    g = GridSpec(8, 1, 1)
    gp = gpma_build(ParticleSoA.empty(), g, gap_ratio=0.0, min_gap=0)
    gp.overflow_floor = 3
    report = apply_pending_moves(gp, pending_for_new(range(4), [0] * 4))
    assert report.overflowed == 4 and report.rebuild_reason == "overflow_limit"
    assert iterate_cell(gp, 0).tolist() == [0, 1, 2, 3]


def test_iterate_cell_skips_gaps():
    g = GridSpec.cubic(2)
    gp = gpma_build(_particles_in([2] * 5, g), g)
    gpma_delete(gp, int(gp.slot_of[1]))
    gpma_delete(gp, int(gp.slot_of[3]))
    assert iterate_cell(gp, 2).tolist() == [0, 2, 4]
    assert iterate_cell(gp, 0).tolist() == []
    with pytest.raises(IndexError):
        iterate_cell(gp, 8)


def test_global_sort_sortedness():
    g = GridSpec.cubic(4)
    cfg = WorkloadConfig(g, ppc=8, kind="drift", seed=1)
    p = make_workload(cfg)
    gp = gpma_build(p, g)
    for _ in range(3):
        advance(p, cfg.dt, g)
        incremental_sort(gp, p.cells(g))
    ids = np.sort(p.id)
    global_sort(gp, p, g)
    valid = gp.local_index[gp.local_index != INVALID]
    assert np.all(np.diff(p.cells(g)[valid]) >= 0)
    assert np.array_equal(np.sort(p.id), ids)
    gp.validate(p, g)
    again = p.copy()
    global_sort(gp, p, g)
    assert np.array_equal(p.id, again.id)


def test_short_oracle_replay():
    rng = np.random.default_rng(11)
    g = GridSpec.cubic(4)
    p = _particles_in(rng.integers(0, g.n_cells, 200), g)
    gp = gpma_build(p, g, min_gap=1)
    oracle = BinOracle(g.n_cells)
    for pid, c in enumerate(p.cells(g)):
        oracle.add(pid, int(c))
    nxt = p.count
    for _ in range(500):
        op = rng.random()
        if op < 0.7 and oracle.where:
            pid = int(rng.choice(list(oracle.where)))
            c = int(rng.integers(0, g.n_cells))
            gp.delete_particle(pid)
            gp.insert(pid, c)
            oracle.move(pid, c)
        elif op < 0.85:
            c = int(rng.integers(0, g.n_cells))
            gp.insert(nxt, c)
            oracle.add(nxt, c)
            nxt += 1
        elif op < 0.97 and oracle.where:
            pid = int(rng.choice(list(oracle.where)))
            gp.delete_particle(pid)
            oracle.remove(pid)
        else:
            gp.rebuild()
        assert [set(m) for m in gp.members()] == oracle.snapshot()
        gp.validate()
