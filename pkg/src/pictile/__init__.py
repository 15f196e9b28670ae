"""Particle-in-cell current deposition on an emulated outer-product tile engine,
with a gapped packed-memory-array incremental sorter and adaptive resort policy."""

from .config import RunConfig
from .domain import (CurrentGrid, GridSpec, ParticleSoA, WorkloadConfig, WorkloadKind, advance,
                     cell_of, intra_cell_coords, make_workload)
from .errors import (CapacityError, CflViolation, ConfigError, CorruptStateError, GpmaError,
                     PicError)
from .gpma import (INVALID, Gpma, InsertOutcome, PendingMove, apply_pending_moves, detect_moves,
                   global_sort, gpma_build, gpma_delete, gpma_insert, gpma_rebuild, iterate_cell)
from .kernels import (Kernel, Quantity, deposit, deposit_hybrid, deposit_rhocell_vector,
                      deposit_scalar, deposit_scalar_oracle, flop_count_scalar)
from .report import report
from .resort import RankSortStats, SortPolicy, SortReason, reset_counters, should_global_sort
from .rhocell import RhocellBuffer, rhocell_add, rhocell_alloc, rhocell_reduce
from .shape import ShapeOrder, cic_shape_1d, qsp_shape_1d
from .simulation import AblationMode, StepMetrics, run_simulation
from .tile_engine import TileEngine, extract_cic, mopa, pack_cic, pack_qsp, qsp_finalize

__all__ = [name for name in dir() if not name.startswith("_")]
