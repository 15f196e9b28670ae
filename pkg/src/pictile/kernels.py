"""Deposition kernels.

Four ways to scatter particle quantities onto the nodal grid:

* :func:`oracle_deposit` evaluates the shape kernel directly as a function of
  node-particle distance, one scalar scatter-add per (node offset, particle).
  It shares no code with the other kernels and is the ground truth.
* ``scalar`` walks particles in a given order and scatter-adds tensor products
  of the per-axis weights straight into the grid.
* ``rhocell`` accumulates each particle's full stencil into its cell's column
  of a per-cell buffer, then reduces once.
* ``tile`` packs particle pairs into outer-product operands for the emulated
  tile engine, extracts valid blocks into the per-cell buffers, then reduces.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import CurrentGrid, GridSpec, ParticleSoA, locate
from .rhocell import node_map, reduce_into, rhocell_alloc
from .shape import ShapeFactors, ShapeOrder, particle_weights, shape_factors
from .tile_engine import (TileEngine, extract_cic, pack_cic, pack_qsp, qsp_finalize)


class Quantity(enum.Enum):
    """What gets scattered: current (``q*v*w``, three components) or density (``q*w``)."""

    CURRENT = "current"
    DENSITY = "density"

    @property
    def n_components(self) -> int:
        return 3 if self is Quantity.CURRENT else 1


def component_weights(particles: ParticleSoA, quantity: Quantity = Quantity.CURRENT) -> np.ndarray:
    if quantity is Quantity.CURRENT:
        return np.stack(particle_weights(particles.q, particles.vx, particles.vy,
                                         particles.vz, particles.w))
    return (particles.q * particles.w)[None, :]


# -- oracle ---------------------------------------------------------------

def _kernel(r: np.ndarray, order: ShapeOrder) -> np.ndarray:
    r = np.abs(r)
    if order is ShapeOrder.CIC:
        return np.maximum(0.0, 1.0 - r)
    inner = 2.0 / 3.0 - r * r + 0.5 * r**3
    outer = (2.0 - r) ** 3 / 6.0
    return np.where(r < 1.0, inner, np.where(r < 2.0, outer, 0.0))


def oracle_deposit(particles: ParticleSoA, grid: GridSpec, order, quantity=Quantity.CURRENT):
    """``J[node] += value_p * S(x_node - x_p)`` for every particle and supported node."""
    order = ShapeOrder.parse(order)
    n_comp = quantity.n_components
    out = np.zeros((n_comp, grid.n_cells))
    if particles.count == 0:
        return out
    if quantity is Quantity.CURRENT:
        values = [particles.q * particles.vx * particles.w,
                  particles.q * particles.vy * particles.w,
                  particles.q * particles.vz * particles.w]
    else:
        values = [particles.q * particles.w]

    axes = []
    for coord, o, d, n in zip((particles.x, particles.y, particles.z), grid.origin,
                              grid.spacing, grid.shape):
        u = (coord - o) / d
        lo = np.floor(u).astype(np.int64) - (0 if order is ShapeOrder.CIC else 1)
        axes.append((u, lo, n))

    reach = 2 if order is ShapeOrder.CIC else 4
    (ux, lx, nx), (uy, ly, ny), (uz, lz, nz) = axes
    for c in range(reach):
        wz = _kernel(lz + c - uz, order)
        kz = (lz + c) % nz
        for b in range(reach):
            wy = _kernel(ly + b - uy, order)
            jy = (ly + b) % ny
            for a in range(reach):
                wx = _kernel(lx + a - ux, order)
                node = (lx + a) % nx + nx * (jy + ny * kz)
                s = wx * wy * wz
                for comp in range(n_comp):
                    np.add.at(out[comp], node, values[comp] * s)
    return out


def deposit_scalar_oracle(particles: ParticleSoA, grid: GridSpec, order) -> CurrentGrid:
    return CurrentGrid(grid, *oracle_deposit(particles, grid, order))


# -- preprocessing --------------------------------------------------------

@dataclass
class PreprocBuffer:
    """Per-particle staged values in storage order."""

    cells: np.ndarray
    factors: ShapeFactors
    weights: np.ndarray  # (n_components, n)

    def __len__(self) -> int:
        return len(self.cells)


def preprocess(particles: ParticleSoA, grid: GridSpec, order,
               quantity: Quantity = Quantity.CURRENT) -> PreprocBuffer:
    i, j, k, cells, dxp, dyp, dzp = locate(particles.x, particles.y, particles.z, grid)
    factors = shape_factors(i, j, k, dxp, dyp, dzp, order)
    return PreprocBuffer(cells, factors, component_weights(particles, quantity))


# -- kernels on staged data ----------------------------------------------

def scatter_scalar(pre: PreprocBuffer, seq: np.ndarray, grid: GridSpec, out: np.ndarray) -> None:
    """Sequential scatter-add in ``seq`` order; y*z products hoisted out of the x loop."""
    f = pre.factors
    s = f.order.support
    bi, bj, bk = f.base_i[seq], f.base_j[seq], f.base_k[seq]
    sx, sy, sz = f.sx[seq], f.sy[seq], f.sz[seq]
    wq = pre.weights[:, seq]
    for c in range(s):
        kz = (bk + c) % grid.nz
        for b in range(s):
            syz = sy[:, b] * sz[:, c]
            row = grid.nx * ((bj + b) % grid.ny + grid.ny * kz)
            for a in range(s):
                sxyz = sx[:, a] * syz
                node = (bi + a) % grid.nx + row
                for comp in range(wq.shape[0]):
                    np.add.at(out[comp], node, wq[comp] * sxyz)


def scatter_rhocell(pre: PreprocBuffer, seq: np.ndarray, buffers) -> None:
    """Full per-particle stencil into the per-cell buffers, no tile engine."""
    stencil = pre.factors.tensor()[seq] if len(seq) else np.zeros((0, buffers[0].nodes_per_cell))
    cells = pre.cells[seq]
    for comp, buf in enumerate(buffers):
        buf.add_many(cells, pre.weights[comp, seq][:, None] * stencil)


@dataclass
class _Pairs:
    first: np.ndarray    # storage index of slot-0 particle
    second: np.ndarray   # storage index of slot-1 particle (slot-0's for a ghost)
    ghost: np.ndarray    # True where slot 1 is padding
    group: np.ndarray    # resident tile group of the pair
    rank: np.ndarray     # pair index inside its group
    group_cells: np.ndarray


def _pairs(seq: np.ndarray, seq_cells: np.ndarray, resident: bool) -> _Pairs:
    n = len(seq)
    pos = np.arange(n)
    if resident:
        starts = np.flatnonzero(np.diff(seq_cells) != 0) + 1
        starts = np.concatenate([[0], starts]) if n else starts
        mark = np.zeros(n, dtype=bool)
        mark[starts] = True
        run = np.cumsum(mark) - 1
        in_run = pos - starts[run]
    else:
        run = pos // 2
        in_run = pos % 2
    first_pos = pos[in_run % 2 == 0]
    nxt = first_pos + 1
    has_second = np.zeros(len(first_pos), dtype=bool)
    ok = nxt < n
    has_second[ok] = (run[nxt[ok]] == run[first_pos[ok]])
    second_pos = np.where(has_second, nxt, first_pos)
    group = run[first_pos]
    rank = in_run[first_pos] // 2
    if resident:
        group_cells = seq_cells[starts] if n else np.zeros(0, dtype=np.int64)
    else:
        group_cells = seq_cells[first_pos]
    return _Pairs(seq[first_pos], seq[second_pos], ~has_second, group, rank, group_cells)


def scatter_tiles(pre: PreprocBuffer, seq: np.ndarray, seq_cells: np.ndarray, buffers,
                  engine: TileEngine, resident: bool = True, unroll: int = 2) -> None:
    """Pairwise outer products on the tile engine, extracted into per-cell buffers.

    ``resident`` keeps one CIC tile (per component and unroll lane) live across
    every pair of a run of same-cell particles and extracts once at the end of
    the run; otherwise each pair gets a fresh tile and is extracted at once,
    whatever the cells of its two particles. QSP tiles must be finalized with
    each pair's own s_z terms, so they are always extracted per pair.
    """
    if len(seq) == 0:
        return
    f = pre.factors
    pr = _pairs(seq, seq_cells, resident)
    p1, p2 = pr.first, pr.second
    live2 = ~pr.ghost
    cell1, cell2 = pre.cells[p1], pre.cells[p2]
    n_groups = len(pr.group_cells)

    for comp, buf in enumerate(buffers):
        w1 = pre.weights[comp, p1]
        w2 = np.where(live2, pre.weights[comp, p2], 0.0)

        if f.order is ShapeOrder.QSP:
            ops = pack_qsp(w1, f.sx[p1], f.sy[p1], w2, f.sx[p2], f.sy[p2])
            tiles = engine.mopa(engine.zero(len(p1)), ops.a, ops.b)
            c1, c2 = qsp_finalize(tiles, f.sz[p1], f.sz[p2])
            engine.extracted(tiles)
            if resident:
                buf.add_many(cell1, c1 + c2)
            else:
                buf.add_many(np.concatenate([cell1, cell2[live2]]),
                             np.concatenate([c1, c2[live2]]))
            continue

        ops = pack_cic(w1, f.sx[p1], f.sy[p1], f.sz[p1], w2, f.sx[p2], f.sy[p2], f.sz[p2])
        if not resident:
            tiles = engine.mopa(engine.zero(len(p1)), ops.a, ops.b)
            engine.extracted(tiles)
            buf.add_many(np.concatenate([cell1, cell2[live2]]),
                         np.concatenate([extract_cic(tiles, "first"),
                                         extract_cic(tiles, "second")[live2]]))
            continue

        lanes = [engine.zero(n_groups) for _ in range(unroll)]
        by_rank = np.argsort(pr.rank, kind="stable")
        bounds = np.searchsorted(pr.rank[by_rank], np.arange(pr.rank.max() + 2))
        for r in range(len(bounds) - 1):
            idx = by_rank[bounds[r]:bounds[r + 1]]
            lane = lanes[r % unroll]
            g = pr.group[idx]
            lane[g] = engine.mopa(lane[g], ops.a[idx], ops.b[idx])
        block = sum(extract_cic(t, "first") + extract_cic(t, "second") for t in lanes)
        engine.extracted(lanes[0])
        buf.add_many(pr.group_cells, block)


# -- drivers --------------------------------------------------------------

class Kernel(enum.Enum):
    SCALAR = "scalar"
    RHOCELL = "rhocell"
    TILE = "tile"


@dataclass
class StageTimes:
    preproc: float = 0.0
    compute: float = 0.0
    reduce: float = 0.0


class Depositor:
    """Owns the reusable per-worker state: node map, rhocell buffers and tile engine."""

    def __init__(self, grid: GridSpec, order, quantity: Quantity = Quantity.CURRENT,
                 unroll: int = 2):
        self.grid = grid
        self.order = ShapeOrder.parse(order)
        self.quantity = quantity
        self.unroll = unroll
        self.nodes = node_map(grid, self.order)
        self.buffers = rhocell_alloc(grid, self.order, quantity.n_components)
        self.engine = TileEngine()

    def deposit(self, particles: ParticleSoA, kernel: Kernel, seq: Optional[np.ndarray] = None,
                resident: bool = True, pre: Optional[PreprocBuffer] = None):
        """Return ``(nodal array (n_comp, n_cells), StageTimes)``.

        ``seq`` is the processing order over storage positions (default:
        storage order). Pass ``pre`` to reuse an earlier preprocessing pass.
        """
        times = StageTimes()
        t0 = time.perf_counter()
        if pre is None:
            pre = preprocess(particles, self.grid, self.order, self.quantity)
        if seq is None:
            seq = np.arange(len(pre))
        t1 = time.perf_counter()
        times.preproc = t1 - t0

        out = np.zeros((self.quantity.n_components, self.grid.n_cells))
        if kernel is Kernel.SCALAR:
            scatter_scalar(pre, seq, self.grid, out)
            times.compute = time.perf_counter() - t1
            return out, times
        if kernel is Kernel.RHOCELL:
            scatter_rhocell(pre, seq, self.buffers)
        else:
            scatter_tiles(pre, seq, pre.cells[seq], self.buffers, self.engine,
                          resident=resident, unroll=self.unroll)
        t2 = time.perf_counter()
        times.compute = t2 - t1
        for buf, target in zip(self.buffers, out):
            reduce_into(buf, target, self.nodes)
        times.reduce = time.perf_counter() - t2
        return out, times


def deposit_scalar(particles, grid, order, seq=None) -> CurrentGrid:
    out, _ = Depositor(grid, order).deposit(particles, Kernel.SCALAR, seq)
    return CurrentGrid(grid, *out)


def deposit_rhocell_vector(particles, grid, order, seq=None) -> CurrentGrid:
    out, _ = Depositor(grid, order).deposit(particles, Kernel.RHOCELL, seq)
    return CurrentGrid(grid, *out)


def deposit_hybrid(particles, gpma, grid, order, resident=True, unroll=2, engine=None):
    """Tile-engine deposition; cell-sorted via ``gpma`` when given, storage order otherwise.

    Returns ``(CurrentGrid, StageTimes, TileEngine)``.
    """
    dep = Depositor(grid, order, unroll=unroll)
    if engine is not None:
        dep.engine = engine
    seq = gpma.sorted_view()[0] if gpma is not None else None
    out, times = dep.deposit(particles, Kernel.TILE, seq, resident=resident)
    return CurrentGrid(grid, *out), times, dep.engine


def deposit(particles: ParticleSoA, grid: GridSpec, order, kernel: Kernel = Kernel.TILE,
            quantity: Quantity = Quantity.CURRENT, seq=None, resident: bool = True) -> np.ndarray:
    """Generic scatter-add of ``quantity``; returns ``(n_components, n_cells)``."""
    out, _ = Depositor(grid, order, quantity).deposit(particles, kernel, seq, resident=resident)
    return out


# -- effective work -------------------------------------------------------

REFERENCE_QSP_FLOPS = 419  # published per-particle effective work for QSP


def flop_breakdown(order) -> dict:
    """Per-particle floating-point add/sub/mul/div of the scalar path, by stage.

    Static tally of :func:`preprocess` + :func:`scatter_scalar`; floor, mod,
    comparisons and integer index arithmetic are not counted.
    """
    order = ShapeOrder.parse(order)
    s = order.support
    return {
        "coords": 3 * 3,                                 # (x-o)/d, u-i per axis
        "shape": 3 * (1 if order is ShapeOrder.CIC else 19),
        "weights": 1 + 3,                                # q*w, then * v per component
        "scatter": s * s + s**3 * (1 + 3 * 2),           # syz; sx*syz, (w*s, +=) x 3
    }


def flop_count_scalar(order) -> int:
    return sum(flop_breakdown(order).values())
