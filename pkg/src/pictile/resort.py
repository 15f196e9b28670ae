"""Adaptive global resort policy: when to pay for a full counting sort."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError


class SortReason(enum.Enum):
    INTERVAL = "Interval"
    REBUILDS = "Rebuilds"
    SLOT_RATIO = "SlotRatio"
    PERF_DEGRADATION = "PerfDegradation"


@dataclass(frozen=True)
class SortPolicy:
    sort_interval: int = 50
    min_sort_interval: int = 10
    trigger_rebuild_count: int = 100
    trigger_empty_ratio: float = 0.15
    trigger_full_ratio: float = 0.85
    perf_enable: bool = True
    perf_degrad: float = 0.80

    def __post_init__(self):
        if self.min_sort_interval < 0 or self.sort_interval < 1:
            raise ConfigError("sort intervals must be positive")
        if self.min_sort_interval > self.sort_interval:
            raise ConfigError("min_sort_interval must not exceed sort_interval")
        for name in ("trigger_empty_ratio", "trigger_full_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.trigger_empty_ratio >= self.trigger_full_ratio:
            raise ConfigError("trigger_empty_ratio must be below trigger_full_ratio")
        if not 0 < self.perf_degrad <= 1:
            raise ConfigError("perf_degrad must lie in (0, 1]")
        if self.trigger_rebuild_count < 0:
            raise ConfigError("trigger_rebuild_count must be >= 0")


@dataclass
class RankSortStats:
    steps_since_sort: int = 0
    cumulative_local_rebuilds: int = 0
    empty_slot_ratio: float = 0.0
    perf_metric: Optional[float] = None
    baseline_perf: Optional[float] = None

    def record_perf(self, particles_per_second: float) -> None:
        """Store the latest throughput; the first one after a sort becomes the baseline."""
        self.perf_metric = particles_per_second
        if self.baseline_perf is None:
            self.baseline_perf = particles_per_second


def should_global_sort(stats: RankSortStats, policy: SortPolicy) -> Optional[SortReason]:
    """First matching strategy in priority order, or ``None`` for no sort."""
    if stats.steps_since_sort < policy.min_sort_interval:
        return None
    if stats.steps_since_sort >= policy.sort_interval:
        return SortReason.INTERVAL
    if stats.cumulative_local_rebuilds > policy.trigger_rebuild_count:
        return SortReason.REBUILDS
    ratio = stats.empty_slot_ratio
    if ratio < policy.trigger_empty_ratio or ratio > policy.trigger_full_ratio:
        return SortReason.SLOT_RATIO
    if (policy.perf_enable and stats.perf_metric is not None and stats.baseline_perf is not None
            and stats.perf_metric < policy.perf_degrad * stats.baseline_perf):
        return SortReason.PERF_DEGRADATION
    return None


def reset_counters(stats: RankSortStats) -> None:
    stats.steps_since_sort = 0
    stats.cumulative_local_rebuilds = 0
    stats.perf_metric = None
    stats.baseline_perf = None
