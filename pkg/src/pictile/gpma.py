"""Gapped packed-memory-array index over cell-sorted particles.

Slots hold storage positions into the particle SoA (the tile-local particle
index) or ``INVALID``. Bin ``c`` owns the slot range
``[bin_offsets[c], bin_offsets[c+1])``; gaps are laid at each bin's tail
at build time and wherever deletions punch holes afterwards.

Free slots are kept on one stack per bin so that an insertion into ``c``
pops in O(1); the tile-wide ``empty_slots_stack`` is their union.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .domain import GridSpec, ParticleSoA
from .errors import GpmaError

INVALID = np.iinfo(np.int64).max

DEFAULT_GAP_RATIO = 0.25
DEFAULT_MIN_GAP = 2
DEFAULT_SCAN_LIMIT = 4


class PendingMove(NamedTuple):
    particle: int
    new_cell: int


class InsertOutcome(enum.Enum):
    PLACED = "placed"
    PLACED_WITH_BORROW = "borrowed"
    OVERFLOWED = "overflowed"


class InsertResult(NamedTuple):
    outcome: InsertOutcome
    shift_count: int = 0


@dataclass
class ApplyReport:
    placed: int = 0
    borrowed: int = 0
    overflowed: int = 0
    shifts: int = 0
    rebuilt: bool = False
    rebuild_reason: str = ""

    @property
    def inserts(self) -> int:
        return self.placed + self.borrowed + self.overflowed


def counting_sort_order(keys: np.ndarray, n_keys: int):
    """Stable permutation sorting ``keys`` in ``[0, n_keys)``, and the per-key counts."""
    keys = np.asarray(keys, dtype=np.int64)
    counts = np.bincount(keys, minlength=n_keys)
    return np.argsort(keys, kind="stable"), counts


def bin_capacity(count, gap_ratio: float, min_gap: int):
    count = np.asarray(count, dtype=np.int64)
    # exact ceil(count*(1+gap_ratio)) up to fp noise in gap_ratio
    return np.ceil(count * (1.0 + gap_ratio) - 1e-9).astype(np.int64) + min_gap


class Gpma:
    def __init__(self, n_cells: int, gap_ratio: float = DEFAULT_GAP_RATIO,
                 min_gap: int = DEFAULT_MIN_GAP, scan_limit: int = DEFAULT_SCAN_LIMIT,
                 empty_threshold: float = 0.15, overflow_floor: int = 16,
                 overflow_fraction: float = 0.01):
        if not 0 <= gap_ratio < 1:
            raise ValueError(f"gap_ratio must lie in [0, 1), got {gap_ratio}")
        if min_gap < 0:
            raise ValueError("min_gap must be >= 0")
        self.n_cells = int(n_cells)
        self.gap_ratio = float(gap_ratio)
        self.min_gap = int(min_gap)
        self.scan_limit = int(scan_limit)
        self.empty_threshold = float(empty_threshold)
        self.overflow_floor = int(overflow_floor)
        self.overflow_fraction = float(overflow_fraction)

        self.rebuild_count = 0
        self.was_rebuilt_this_step = False
        self.insert_count = 0
        self.shift_total = 0
        self._layout([[] for _ in range(self.n_cells)], n_slots_hint=0)

    # -- layout ------------------------------------------------------------

    def _layout(self, members: List[List[int]], n_slots_hint: int) -> None:
        """Lay out ``members[c]`` contiguously per bin with fresh tail gaps."""
        lengths = np.array([len(m) for m in members], dtype=np.int64)
        caps = bin_capacity(lengths, self.gap_ratio, self.min_gap)
        offsets = np.zeros(self.n_cells + 1, dtype=np.int64)
        np.cumsum(caps, out=offsets[1:])
        local = np.full(int(offsets[-1]), INVALID, dtype=np.int64)
        free = []
        for c, m in enumerate(members):
            start = int(offsets[c])
            local[start:start + len(m)] = m
            # pushed high-to-low so pops fill the lowest gap first
            free.append(list(range(int(offsets[c + 1]) - 1, start + len(m) - 1, -1)))
        self.local_index = local
        self.bin_offsets = offsets
        self.bin_lengths = lengths
        self._free = free
        self.num_particles = int(lengths.sum())
        self.num_empty_slots = int(local.size - self.num_particles)
        self.overflow_list: List[PendingMove] = []
        size = max(n_slots_hint, int(max((max(m) for m in members if m), default=-1)) + 1)
        self.slot_of = np.full(size, -1, dtype=np.int64)
        valid = local != INVALID
        self.slot_of[local[valid]] = np.flatnonzero(valid)

    @property
    def capacity(self) -> int:
        return int(self.local_index.size)

    @property
    def empty_slots_stack(self) -> List[int]:
        return [s for stack in self._free for s in stack]

    @property
    def empty_slot_ratio(self) -> float:
        return self.num_empty_slots / self.capacity if self.capacity else 0.0

    @property
    def overflow_limit(self) -> int:
        return max(self.overflow_floor, int(self.overflow_fraction * self.num_particles))

    @property
    def mean_shift(self) -> float:
        return self.shift_total / self.insert_count if self.insert_count else 0.0

    def slot_bins(self) -> np.ndarray:
        """Bin id of every slot."""
        return np.repeat(np.arange(self.n_cells), np.diff(self.bin_offsets))

    def _ensure_slot_of(self, pid: int) -> None:
        if pid >= self.slot_of.size:
            grown = np.full(max(pid + 1, 2 * self.slot_of.size), -1, dtype=np.int64)
            grown[:self.slot_of.size] = self.slot_of
            self.slot_of = grown

    # -- queries -----------------------------------------------------------

    def iterate_cell(self, c: int) -> np.ndarray:
        if not 0 <= c < self.n_cells:
            raise IndexError(f"cell {c} out of range")
        window = self.local_index[self.bin_offsets[c]:self.bin_offsets[c + 1]]
        return window[window != INVALID]

    def sorted_view(self):
        """All tracked particles grouped by cell: ``(positions, cells)``.

        Bin entries come in slot order; overflow entries follow their cell's
        bin entries in overflow-list order.
        """
        valid = self.local_index != INVALID
        pos = self.local_index[valid]
        cells = self.slot_bins()[valid]
        if self.overflow_list:
            extra = np.array(self.overflow_list, dtype=np.int64).reshape(-1, 2)
            pos = np.concatenate([pos, extra[:, 0]])
            cells = np.concatenate([cells, extra[:, 1]])
            order = np.argsort(cells, kind="stable")
            pos, cells = pos[order], cells[order]
        return pos, cells

    def members(self) -> List[List[int]]:
        """Per-cell lists of tracked particles (bins then overflow)."""
        out = [self.iterate_cell(c).tolist() for c in range(self.n_cells)]
        for pid, c in self.overflow_list:
            out[c].append(pid)
        return out

    # -- mutation ----------------------------------------------------------

    def delete(self, slot: int) -> None:
        pid = int(self.local_index[slot])
        if pid == INVALID:
            raise GpmaError(f"slot {slot} is already empty")
        c = int(np.searchsorted(self.bin_offsets, slot, side="right")) - 1
        self.local_index[slot] = INVALID
        self.bin_lengths[c] -= 1
        self.num_particles -= 1
        self.num_empty_slots += 1
        self._free[c].append(int(slot))
        self.slot_of[pid] = -1

    def delete_particle(self, pid: int) -> None:
        slot = int(self.slot_of[pid]) if pid < self.slot_of.size else -1
        if slot >= 0:
            self.delete(slot)
            return
        for n, (p, _) in enumerate(self.overflow_list):
            if p == pid:
                del self.overflow_list[n]
                self.slot_of[pid] = -1
                return
        raise GpmaError(f"particle {pid} is not tracked")

    def insert(self, pid: int, c_new: int) -> InsertResult:
        pid, c_new = int(pid), int(c_new)
        if not 0 <= c_new < self.n_cells:
            raise IndexError(f"cell {c_new} out of range")
        self._ensure_slot_of(pid)
        if self.slot_of[pid] != -1:
            raise GpmaError(f"particle {pid} is already tracked")
        self.insert_count += 1

        free = self._free[c_new]
        if free:
            slot = free.pop()
            self.local_index[slot] = pid
            self.slot_of[pid] = slot
            self._placed(c_new)
            return InsertResult(InsertOutcome.PLACED)

        last = min(self.n_cells, c_new + 1 + self.scan_limit)
        for donor in range(c_new + 1, last):
            if self._free[donor]:
                return self._borrow(pid, c_new, donor)

        self.overflow_list.append(PendingMove(pid, c_new))
        self.slot_of[pid] = -2
        return InsertResult(InsertOutcome.OVERFLOWED)

    def _placed(self, c: int) -> None:
        self.bin_lengths[c] += 1
        self.num_particles += 1
        self.num_empty_slots -= 1

    def _borrow(self, pid: int, c_new: int, donor: int) -> InsertResult:
        stack = self._free[donor]
        hole = min(stack)
        stack.remove(hole)
        end = int(self.bin_offsets[c_new + 1])
        n_shift = hole - end
        li = self.local_index
        if n_shift:
            moved = li[end:hole].copy()
            li[end + 1:hole + 1] = moved
            self.slot_of[moved] += 1
        li[end] = pid
        self.slot_of[pid] = end
        self.bin_offsets[c_new + 1:donor + 1] += 1
        self._placed(c_new)
        self.shift_total += n_shift
        return InsertResult(InsertOutcome.PLACED_WITH_BORROW, n_shift)

    def rebuild(self, particles: Optional[ParticleSoA] = None) -> None:
        """Re-pack every bin (overflow drained) with fresh uniform gaps."""
        members = self.members()
        hint = self.slot_of.size if particles is None else max(self.slot_of.size, particles.count)
        self._layout(members, n_slots_hint=hint)
        self.rebuild_count += 1
        self.was_rebuilt_this_step = True

    def load(self, particles: ParticleSoA, grid: GridSpec) -> None:
        """Counting-sort ``particles`` in place by cell and lay out fresh bins."""
        order, counts = counting_sort_order(particles.cells(grid), self.n_cells)
        particles.permute(order)
        starts = np.concatenate([[0], np.cumsum(counts)])
        members = [list(range(starts[c], starts[c + 1])) for c in range(self.n_cells)]
        self._layout(members, n_slots_hint=particles.count)

    # -- checks ------------------------------------------------------------

    def validate(self, particles: Optional[ParticleSoA] = None, grid: Optional[GridSpec] = None):
        def fail(msg):
            raise GpmaError(msg)

        off = self.bin_offsets
        if off[0] != 0 or off[-1] != self.capacity or np.any(np.diff(off) < 0):
            fail("bin offsets are not a nondecreasing partition of the slots")
        valid = self.local_index != INVALID
        counts = np.bincount(self.slot_bins()[valid], minlength=self.n_cells)
        if not np.array_equal(counts, self.bin_lengths):
            fail("bin_lengths disagree with valid slots")
        if self.bin_lengths.sum() != self.num_particles:
            fail("sum of bin_lengths != num_particles")
        if self.num_particles + self.num_empty_slots != self.capacity:
            fail("num_particles + num_empty_slots != capacity")
        stack = self.empty_slots_stack
        if len(stack) != self.num_empty_slots:
            fail("empty-slot stack size != num_empty_slots")
        if sorted(stack) != np.flatnonzero(~valid).tolist():
            fail("empty-slot stack does not match INVALID slots")
        for c, st in enumerate(self._free):
            if st and (min(st) < off[c] or max(st) >= off[c + 1]):
                fail(f"bin {c} free stack points outside the bin")
        ids = self.local_index[valid]
        if len(np.unique(ids)) != len(ids):
            fail("duplicate particle in index")
        if np.any(self.slot_of[ids] != np.flatnonzero(valid)):
            fail("slot_of map is stale")
        over = [p for p, _ in self.overflow_list]
        if len(set(over)) != len(over) or set(over) & set(ids.tolist()):
            fail("overflow list duplicates a tracked particle")
        if particles is not None and grid is not None:
            cells = particles.cells(grid)
            if np.any(cells[ids] != self.slot_bins()[valid]):
                fail("a particle sits in the wrong bin")
            for pid, c in self.overflow_list:
                if cells[pid] != c:
                    fail("overflow entry has a stale cell")
        return True


# -- module-level operations ----------------------------------------------

def gpma_build(particles: ParticleSoA, grid: GridSpec, gap_ratio: float = DEFAULT_GAP_RATIO,
               min_gap: int = DEFAULT_MIN_GAP, **kwargs) -> Gpma:
    gpma = Gpma(grid.n_cells, gap_ratio=gap_ratio, min_gap=min_gap, **kwargs)
    gpma.load(particles, grid)
    return gpma


def gpma_delete(gpma: Gpma, slot: int) -> None:
    gpma.delete(slot)


def gpma_insert(gpma: Gpma, pid: int, c_new: int) -> InsertResult:
    return gpma.insert(pid, c_new)


def gpma_rebuild(gpma: Gpma, particles: Optional[ParticleSoA] = None) -> None:
    gpma.rebuild(particles)


def iterate_cell(gpma: Gpma, c: int) -> np.ndarray:
    return gpma.iterate_cell(c)


def pending_for_new(pids, cells) -> List[PendingMove]:
    """Pending insertions for freshly added particles; they go ahead of moves."""
    return [PendingMove(int(p), int(c)) for p, c in zip(pids, cells)]


def detect_moves(gpma: Gpma, particles: ParticleSoA = None, grid: GridSpec = None,
                 cells: np.ndarray = None) -> List[PendingMove]:
    """Invalidate slots of particles whose cell changed; return their pending moves.

    ``cells`` (current cell per storage position) may be passed to reuse a
    preprocessing pass instead of recomputing from ``particles``.
    """
    if cells is None:
        cells = particles.cells(grid)
    li = gpma.local_index
    slots = np.flatnonzero(li != INVALID)
    pids = li[slots]
    old = gpma.slot_bins()[slots]
    new = cells[pids]
    moved = np.flatnonzero(new != old)

    for n, (pid, c) in enumerate(gpma.overflow_list):
        if cells[pid] != c:
            gpma.overflow_list[n] = PendingMove(pid, int(cells[pid]))
    if moved.size == 0:
        return []

    mslots, mpids, mold = slots[moved], pids[moved], old[moved]
    li[mslots] = INVALID
    gpma.slot_of[mpids] = -1
    gpma.bin_lengths -= np.bincount(mold, minlength=gpma.n_cells)
    gpma.num_particles -= moved.size
    gpma.num_empty_slots += moved.size
    free = gpma._free
    for s, c in zip(mslots.tolist(), mold.tolist()):
        free[c].append(s)
    return [PendingMove(p, c) for p, c in zip(mpids.tolist(), new[moved].tolist())]


def rebuild_reason(gpma: Gpma) -> str:
    """Mandatory local-rebuild trigger, or ``""`` if none applies.

    Low empty-slot ratio on its own is left to the global resort policy.
    """
    n_over = len(gpma.overflow_list)
    low = gpma.num_empty_slots < gpma.empty_threshold * gpma.capacity
    if n_over > gpma.overflow_limit:
        return "overflow_limit"
    if n_over and low:
        return "overflow_low_slots"
    return ""


def apply_pending_moves(gpma: Gpma, pending: List[PendingMove], stats=None) -> ApplyReport:
    report = ApplyReport()
    shifts0 = gpma.shift_total
    for pid, c in pending:
        result = gpma.insert(pid, c)
        if result.outcome is InsertOutcome.PLACED:
            report.placed += 1
        elif result.outcome is InsertOutcome.PLACED_WITH_BORROW:
            report.borrowed += 1
        else:
            report.overflowed += 1
    report.shifts = gpma.shift_total - shifts0
    pending.clear()

    reason = rebuild_reason(gpma)
    if reason:
        gpma.rebuild()
        report.rebuilt = True
        report.rebuild_reason = reason
        if stats is not None:
            stats.cumulative_local_rebuilds += 1
    return report


def incremental_sort(gpma: Gpma, cells: np.ndarray, stats=None, new_particles=None) -> ApplyReport:
    """One step of incremental sorting: new particles, move detection, then apply."""
    gpma.was_rebuilt_this_step = False
    pending = list(new_particles or [])
    pending.extend(detect_moves(gpma, cells=cells))
    return apply_pending_moves(gpma, pending, stats)


def global_sort(gpma: Gpma, particles: ParticleSoA, grid: GridSpec) -> Gpma:
    """Full counting sort of the SoA and a from-scratch index."""
    gpma.load(particles, grid)
    return gpma
