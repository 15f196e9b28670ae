"""Per-cell contribution buffers and their reduction onto the nodal grid."""

from __future__ import annotations

import numpy as np

from .domain import CurrentGrid, GridSpec
from .errors import CapacityError
from .shape import ShapeOrder

DEFAULT_BUDGET_BYTES = 4 * 2**30


def node_map(grid: GridSpec, order: ShapeOrder) -> np.ndarray:
    """Global node id for every ``(cell, local_node)``, shape ``(n_cells, nodes_per_cell)``.

    Local nodes run x-fastest over the stencil starting at ``cell + base_offset``
    on each axis, wrapped periodically. Injective per cell whenever every axis
    has at least ``support`` cells.
    """
    order = ShapeOrder.parse(order)
    s, off = order.support, order.base_offset
    ci, cj, ck = grid.unravel(np.arange(grid.n_cells))
    lc, lb, la = np.meshgrid(np.arange(s), np.arange(s), np.arange(s), indexing="ij")
    la, lb, lc = la.ravel(), lb.ravel(), lc.ravel()
    gi = (ci[:, None] + off + la[None, :]) % grid.nx
    gj = (cj[:, None] + off + lb[None, :]) % grid.ny
    gk = (ck[:, None] + off + lc[None, :]) % grid.nz
    return grid.linear_id(gi, gj, gk)


class RhocellBuffer:
    """Column ``c`` holds the node contributions of particles in cell ``c``.

    ``data`` has the logical shape ``(nodes_per_cell, n_cells)``; storage is
    cell-major so each column is contiguous.
    """

    def __init__(self, grid: GridSpec, order: ShapeOrder):
        self.grid = grid
        self.order = ShapeOrder.parse(order)
        self._cols = np.zeros((grid.n_cells, self.order.nodes_per_cell))

    @property
    def data(self) -> np.ndarray:
        return self._cols.T

    @property
    def nodes_per_cell(self) -> int:
        return self._cols.shape[1]

    def add(self, i_cell: int, block) -> None:
        if not 0 <= i_cell < self._cols.shape[0]:
            raise IndexError(f"cell {i_cell} out of range")
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (self.nodes_per_cell,):
            raise ValueError(f"block must have {self.nodes_per_cell} entries")
        self._cols[i_cell] += block

    def add_many(self, cells, blocks) -> None:
        """Accumulate ``blocks[r]`` into column ``cells[r]``; repeated cells are summed in row order."""
        cells = np.asarray(cells, dtype=np.int64)
        if cells.size == 0:
            return
        blocks = np.asarray(blocks, dtype=np.float64)
        starts = np.concatenate([[0], np.flatnonzero(np.diff(cells)) + 1])
        if len(starts) < len(cells):
            # collapse runs of one cell first; rows are summed in order either way
            blocks = np.add.reduceat(blocks, starts, axis=0)
            cells = cells[starts]
        if len(cells) == 1 or np.all(np.diff(cells) > 0):
            self._cols[cells] += blocks
            return
        npc = self.nodes_per_cell
        idx = cells[:, None] * npc + np.arange(npc)[None, :]
        self._cols.reshape(-1)[:] += np.bincount(idx.ravel(), weights=np.ravel(blocks),
                                                 minlength=self._cols.size)

    def column_sums(self) -> np.ndarray:
        return self._cols.sum(axis=1)

    def total(self) -> float:
        return float(self._cols.sum())

    def clear(self) -> None:
        self._cols[:] = 0.0


def rhocell_alloc(grid: GridSpec, order: ShapeOrder, n_components: int = 3,
                  budget_bytes: int = DEFAULT_BUDGET_BYTES):
    order = ShapeOrder.parse(order)
    need = n_components * grid.n_cells * order.nodes_per_cell * 8
    if need > budget_bytes:
        raise CapacityError(f"rhocell buffers need {need} bytes, budget is {budget_bytes}")
    return [RhocellBuffer(grid, order) for _ in range(n_components)]


def rhocell_add(buffer: RhocellBuffer, i_cell: int, block) -> None:
    buffer.add(i_cell, block)


def reduce_into(buffer: RhocellBuffer, target: np.ndarray, nodes: np.ndarray = None) -> None:
    """Scatter-add one buffer onto a flat nodal array, cell-major then node order."""
    if nodes is None:
        nodes = node_map(buffer.grid, buffer.order)
    target += np.bincount(nodes.ravel(), weights=buffer._cols.ravel(), minlength=target.size)
    buffer.clear()


def rhocell_reduce(buffers, current: CurrentGrid, nodes: np.ndarray = None) -> None:
    """Reduce each component buffer into the matching ``current`` array; buffers are zeroed."""
    if nodes is None:
        nodes = node_map(buffers[0].grid, buffers[0].order)
    for buf, target in zip(buffers, current.components):
        reduce_into(buf, target, nodes)
