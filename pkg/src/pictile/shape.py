"""1D shape factors for CIC and cubic-spline (QSP) deposition.

All functions broadcast over a leading batch of particles; the node axis is
always last.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ShapeOrder(enum.IntEnum):
    CIC = 1
    QSP = 3

    @classmethod
    def parse(cls, value) -> "ShapeOrder":
        if isinstance(value, ShapeOrder):
            return value
        text = str(value).strip().lower()
        table = {"1": cls.CIC, "cic": cls.CIC, "3": cls.QSP, "qsp": cls.QSP}
        if text not in table:
            raise ValueError(f"unsupported shape order {value!r} (want 1/cic or 3/qsp)")
        return table[text]

    @property
    def support(self) -> int:
        """Nodes per axis touched by one particle."""
        return 2 if self is ShapeOrder.CIC else 4

    @property
    def nodes_per_cell(self) -> int:
        return self.support**3

    @property
    def base_offset(self) -> int:
        """Lowest supported node relative to the particle's cell index."""
        return 0 if self is ShapeOrder.CIC else -1


def _check_unit_interval(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if not np.all((d >= 0.0) & (d < 1.0)):
        raise ValueError("intra-cell coordinate must lie in [0, 1)")
    return d


def cic_shape_1d(d) -> np.ndarray:
    d = _check_unit_interval(d)
    return np.stack([1.0 - d, d], axis=-1)


def qsp_shape_1d(d) -> np.ndarray:
    """Uniform cubic B-spline weights over nodes ``{i-1, i, i+1, i+2}``."""
    t = _check_unit_interval(d)
    t2 = t * t
    t3 = t2 * t
    om = 1.0 - t
    s0 = om * om * om / 6.0
    s1 = (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0
    s2 = (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0
    s3 = t3 / 6.0
    return np.stack([s0, s1, s2, s3], axis=-1)


def shape_1d(d, order: ShapeOrder) -> np.ndarray:
    return cic_shape_1d(d) if ShapeOrder.parse(order) is ShapeOrder.CIC else qsp_shape_1d(d)


@dataclass
class ShapeFactors:
    """Per-axis weights, each of shape ``(n, support)``, plus the lowest node index per axis."""

    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    base_i: np.ndarray
    base_j: np.ndarray
    base_k: np.ndarray
    order: ShapeOrder

    def tensor(self) -> np.ndarray:
        """Full 3D stencil ``(n, nodes_per_cell)`` ordered x-fastest, then y, then z."""
        return (self.sz[:, :, None, None] * self.sy[:, None, :, None]
                * self.sx[:, None, None, :]).reshape(len(self.sx), -1)


def shape_factors(i, j, k, dxp, dyp, dzp, order: ShapeOrder) -> ShapeFactors:
    order = ShapeOrder.parse(order)
    off = order.base_offset
    return ShapeFactors(shape_1d(dxp, order), shape_1d(dyp, order), shape_1d(dzp, order),
                        np.asarray(i) + off, np.asarray(j) + off, np.asarray(k) + off, order)


def particle_weights(q, vx, vy, vz, w):
    """Effective current weights ``(q*vx*w, q*vy*w, q*vz*w)``."""
    qw = np.asarray(q) * np.asarray(w)
    return qw * vx, qw * vy, qw * vz
