"""Emulated 8x8 FP64 outer-product-accumulate tile and the two-particle operand layouts.

Tiles are plain ``ndarray`` values of shape ``(..., 8, 8)``; every function
broadcasts over leading batch axes so one call can stand for many
independent tiles. Contribution blocks are ordered x-node fastest, then y,
then z, matching the rhocell layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TILE_WIDTH = 8


class TileWidthError(ValueError):
    """Operand longer than the tile."""


def tile_zero(batch=()) -> np.ndarray:
    shape = (batch,) if isinstance(batch, (int, np.integer)) else tuple(batch)
    return np.zeros(shape + (TILE_WIDTH, TILE_WIDTH))


def mopa(tile: np.ndarray, a, b) -> np.ndarray:
    """Return ``tile`` with ``a (x) b`` accumulated into its top-left ``len(a) x len(b)`` block."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape[-1], b.shape[-1]
    if m > TILE_WIDTH or n > TILE_WIDTH:
        raise TileWidthError(f"operands {m}x{n} exceed the {TILE_WIDTH}-lane tile")
    outer = a[..., :, None] * b[..., None, :]
    if m == n == TILE_WIDTH:
        return tile + outer
    out = np.array(tile, dtype=np.float64, copy=True)
    out[..., :m, :n] += outer
    return out


@dataclass
class CicOperands:
    a: np.ndarray  # (..., 4): w1*sx1, w2*sx2
    b: np.ndarray  # (..., 8): (sy*sz)1, (sy*sz)2


@dataclass
class QspOperands:
    a: np.ndarray  # (..., 8): w1*sx1, w2*sx2
    b: np.ndarray  # (..., 8): sy1, sy2


def _yz_products(sy, sz):
    # column index = jy + 2*kz
    sy, sz = np.asarray(sy), np.asarray(sz)
    return (sz[..., :, None] * sy[..., None, :]).reshape(sy.shape[:-1] + (4,))


def pack_cic(w1, sx1, sy1, sz1, w2, sx2, sy2, sz2) -> CicOperands:
    w1 = np.asarray(w1)[..., None]
    w2 = np.asarray(w2)[..., None]
    a = np.concatenate([w1 * sx1, w2 * sx2], axis=-1)
    b = np.concatenate([_yz_products(sy1, sz1), _yz_products(sy2, sz2)], axis=-1)
    return CicOperands(a, b)


_CIC_BLOCKS = {"first": (0, 0), "second": (2, 4)}


def extract_cic(tile: np.ndarray, which: str) -> np.ndarray:
    """Read one particle slot's 2x4 block as 8 contributions; cross blocks are never touched."""
    r0, c0 = _CIC_BLOCKS[which]
    block = tile[..., r0:r0 + 2, c0:c0 + 4]
    return np.swapaxes(block, -1, -2).reshape(block.shape[:-2] + (8,))


def pack_qsp(w1, sx1, sy1, w2, sx2, sy2) -> QspOperands:
    w1 = np.asarray(w1)[..., None]
    w2 = np.asarray(w2)[..., None]
    a = np.concatenate([w1 * sx1, w2 * sx2], axis=-1)
    b = np.concatenate([np.asarray(sy1), np.asarray(sy2)], axis=-1)
    return QspOperands(a, b)


def _finalize_block(block, sz):
    sz = np.asarray(sz)
    lead = block.shape[:-2]
    # (x, y) block -> y-major so the flattened xy plane runs x fastest
    plane = np.ascontiguousarray(np.swapaxes(block, -1, -2)).reshape(lead + (1, 16))
    return (sz[..., :, None] * plane).reshape(lead + (64,))


def qsp_finalize(tile: np.ndarray, sz1, sz2):
    """Scale each diagonal 4x4 block by its particle's s_z terms: two 64-entry blocks."""
    return (_finalize_block(tile[..., 0:4, 0:4], sz1),
            _finalize_block(tile[..., 4:8, 4:8], sz2))


class TileEngine:
    """Counts tile traffic around the pure functions above.

    A batched call over ``n`` independent tiles counts as ``n`` operations.
    """

    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.zero_calls = 0
        self.mopa_calls = 0
        self.extract_passes = 0

    @staticmethod
    def _batch(arr, trailing: int) -> int:
        return int(np.prod(np.shape(arr)[:-trailing], dtype=np.int64))

    def zero(self, batch=()) -> np.ndarray:
        tile = tile_zero(batch)
        self.zero_calls += self._batch(tile, 2)
        return tile

    def mopa(self, tile, a, b) -> np.ndarray:
        out = mopa(tile, a, b)
        self.mopa_calls += self._batch(np.asarray(a), 1)
        return out

    def extracted(self, tiles) -> None:
        self.extract_passes += self._batch(tiles, 2)
