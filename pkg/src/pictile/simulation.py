"""Ablation-mode simulation driver and per-step metrics."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .config import RunConfig
from .domain import CurrentGrid, ParticleSoA, WorkloadConfig, advance, make_workload
from .gpma import Gpma, global_sort, incremental_sort
from .kernels import Depositor, Kernel, oracle_deposit, preprocess
from .resort import RankSortStats, SortPolicy, reset_counters, should_global_sort
from .shape import ShapeOrder


class Sorting(enum.Enum):
    NONE = "none"
    INCREMENTAL = "incremental"      # gpma + adaptive global resort
    EVERY_STEP = "every_step"        # full counting sort each step


class AblationMode(enum.Enum):
    BASELINE = "Baseline"
    MATRIX_ONLY = "MatrixOnly"
    HYBRID_NO_SORT = "HybridNoSort"
    HYBRID_GLOBAL_SORT = "HybridGlobalSort"
    FULL_OPT = "FullOpt"
    RHOCELL_VECTOR = "RhocellVector"
    BASELINE_INCR_SORT = "BaselineIncrSort"
    RHOCELL_INCR_SORT = "RhocellIncrSort"

    @classmethod
    def parse(cls, text) -> "AblationMode":
        if isinstance(text, AblationMode):
            return text
        key = str(text).replace("-", "").replace("_", "").replace("+", "").lower()
        for mode in cls:
            if mode.value.lower() == key or mode.name.replace("_", "").lower() == key:
                return mode
        raise ValueError(f"unknown mode {text!r}; choose from {[m.value for m in cls]}")

    @property
    def kernel(self) -> Kernel:
        return _MODE_TABLE[self][0]

    @property
    def sorting(self) -> Sorting:
        return _MODE_TABLE[self][1]

    @property
    def resident(self) -> bool:
        """Tile residency across same-cell runs (tile kernels only)."""
        return _MODE_TABLE[self][2]

    @property
    def adaptive_resort(self) -> bool:
        return self is AblationMode.FULL_OPT


_MODE_TABLE = {
    AblationMode.BASELINE: (Kernel.SCALAR, Sorting.NONE, False),
    AblationMode.MATRIX_ONLY: (Kernel.TILE, Sorting.NONE, False),
    AblationMode.HYBRID_NO_SORT: (Kernel.TILE, Sorting.NONE, True),
    AblationMode.HYBRID_GLOBAL_SORT: (Kernel.TILE, Sorting.EVERY_STEP, True),
    AblationMode.FULL_OPT: (Kernel.TILE, Sorting.INCREMENTAL, True),
    AblationMode.RHOCELL_VECTOR: (Kernel.RHOCELL, Sorting.NONE, False),
    AblationMode.BASELINE_INCR_SORT: (Kernel.SCALAR, Sorting.INCREMENTAL, False),
    AblationMode.RHOCELL_INCR_SORT: (Kernel.RHOCELL, Sorting.INCREMENTAL, False),
}


@dataclass
class StepMetrics:
    step: int
    wall_time: float = 0.0
    preproc_time: float = 0.0
    compute_time: float = 0.0
    sort_time: float = 0.0
    reduce_time: float = 0.0
    particles_per_second: float = 0.0
    fraction_moved: float = 0.0
    rebuilds_this_step: int = 0
    global_sort_reason: str = ""

    @property
    def deposition_time(self) -> float:
        return self.preproc_time + self.sort_time + self.compute_time + self.reduce_time

    @property
    def global_sort_fired(self) -> bool:
        return bool(self.global_sort_reason)


@dataclass
class RunResult:
    mode: AblationMode
    order: ShapeOrder
    metrics: List[StepMetrics]
    current: CurrentGrid
    particles: ParticleSoA
    gpma: Optional[Gpma] = None
    stats: Optional[RankSortStats] = None
    sort_steps: List[int] = field(default_factory=list)

    @property
    def checksum(self) -> tuple:
        return self.current.checksum()


def run_simulation(config, mode=AblationMode.FULL_OPT, policy: Optional[SortPolicy] = None,
                   order=None, validate: bool = False) -> RunResult:
    """Advance, sort per ``mode``, deposit, record metrics; repeat ``steps`` times.

    ``config`` is a :class:`RunConfig` or a bare :class:`WorkloadConfig`.
    ``validate`` checks every Gpma invariant after each step (debug aid).
    """
    if isinstance(config, WorkloadConfig):
        config = RunConfig(config)
    mode = AblationMode.parse(mode)
    policy = policy or config.policy
    order = ShapeOrder.parse(order if order is not None else config.order)
    wl = config.workload
    wl.validate()
    grid = wl.grid

    particles = make_workload(wl)
    depositor = Depositor(grid, order)
    stats = RankSortStats()
    gpma = None
    if mode.sorting is not Sorting.NONE:
        gpma = Gpma(grid.n_cells, config.gap_ratio, config.min_gap,
                    empty_threshold=policy.trigger_empty_ratio)
        global_sort(gpma, particles, grid)

    metrics, sort_steps = [], []
    out = np.zeros((3, grid.n_cells))
    for step in range(1, wl.steps + 1):
        m = StepMetrics(step)
        t_start = time.perf_counter()
        m.fraction_moved = advance(particles, wl.dt, grid)
        stats.steps_since_sort += 1

        if mode.sorting is Sorting.EVERY_STEP:
            t0 = time.perf_counter()
            global_sort(gpma, particles, grid)
            m.sort_time += time.perf_counter() - t0
            m.global_sort_reason = "EveryStep"

        t0 = time.perf_counter()
        pre = preprocess(particles, grid, order)
        m.preproc_time = time.perf_counter() - t0

        seq = None
        if gpma is not None:
            t0 = time.perf_counter()
            if mode.sorting is Sorting.INCREMENTAL:
                report = incremental_sort(gpma, pre.cells, stats)
                m.rebuilds_this_step = int(report.rebuilt)
            seq = gpma.sorted_view()[0]
            m.sort_time += time.perf_counter() - t0

        out, times = depositor.deposit(particles, mode.kernel, seq, resident=mode.resident,
                                       pre=pre)
        m.compute_time, m.reduce_time = times.compute, times.reduce
        m.particles_per_second = (particles.count / m.deposition_time
                                  if m.deposition_time > 0 else 0.0)

        if validate and gpma is not None:
            gpma.validate(particles, grid)

        if mode.adaptive_resort:
            stats.empty_slot_ratio = gpma.empty_slot_ratio
            stats.record_perf(m.particles_per_second)
            reason = should_global_sort(stats, policy)
            if reason is not None:
                t0 = time.perf_counter()
                global_sort(gpma, particles, grid)
                m.sort_time += time.perf_counter() - t0
                reset_counters(stats)
                m.global_sort_reason = reason.value
                sort_steps.append(step)
        m.wall_time = time.perf_counter() - t_start
        metrics.append(m)

    current = CurrentGrid(grid, *out) if wl.steps else CurrentGrid(grid, *np.zeros((3, grid.n_cells)))
    return RunResult(mode, order, metrics, current, particles, gpma, stats, sort_steps)


def oracle_replay(config, order=None) -> CurrentGrid:
    """Final-step grid from the brute-force oracle on an identically seeded run.

    Advance is elementwise, so each particle's trajectory does not depend on
    storage order and the replay needs no sorting at all.
    """
    if isinstance(config, WorkloadConfig):
        config = RunConfig(config)
    order = ShapeOrder.parse(order if order is not None else config.order)
    wl = config.workload
    particles = make_workload(wl)
    for _ in range(wl.steps):
        advance(particles, wl.dt, wl.grid)
    return CurrentGrid(wl.grid, *oracle_deposit(particles, wl.grid, order))


def relative_error(result: np.ndarray, reference: np.ndarray) -> float:
    """``max |result - reference| / max |reference|`` (0 when both vanish)."""
    result, reference = np.asarray(result), np.asarray(reference)
    scale = np.abs(reference).max() if reference.size else 0.0
    diff = np.abs(result - reference).max() if reference.size else 0.0
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)
