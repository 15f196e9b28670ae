"""Grid geometry, particle storage, cell indexing and workload generation.

Linear cell ids follow ``i + nx*(j + ny*k)``, the same ordering used for
nodal arrays: on a periodic grid node ``(i, j, k)`` is the lower corner of
cell ``(i, j, k)`` and the two index spaces coincide.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, CflViolation, ConfigError, CorruptStateError

MAX_PARTICLES = 2**31 - 1


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    dx: float = 1.0
    dy: float = 1.0
    dz: float = 1.0
    origin: tuple = (0.0, 0.0, 0.0)
    boundary: str = "periodic"

    def __post_init__(self):
        for n in (self.nx, self.ny, self.nz):
            if int(n) != n or n < 1:
                raise ConfigError(f"cell counts must be positive integers, got {self.shape}")
        for d in (self.dx, self.dy, self.dz):
            if not (d > 0 and math.isfinite(d)):
                raise ConfigError(f"cell sizes must be positive, got {self.spacing}")
        if len(self.origin) != 3:
            raise ConfigError("origin must be a 3-vector")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.boundary != "periodic":
            raise ConfigError(f"only periodic boundaries are supported, got {self.boundary!r}")

    @classmethod
    def cubic(cls, n: int, spacing: float = 1.0) -> "GridSpec":
        return cls(n, n, n, spacing, spacing, spacing)

    @property
    def shape(self) -> tuple:
        return (self.nx, self.ny, self.nz)

    @property
    def spacing(self) -> tuple:
        return (self.dx, self.dy, self.dz)

    @property
    def lengths(self) -> tuple:
        return (self.nx * self.dx, self.ny * self.dy, self.nz * self.dz)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    def linear_id(self, i, j, k):
        return i + self.nx * (j + self.ny * k)

    def unravel(self, lin):
        """Inverse of :meth:`linear_id`."""
        lin = np.asarray(lin)
        i = lin % self.nx
        j = (lin // self.nx) % self.ny
        k = lin // (self.nx * self.ny)
        return i, j, k


# -- cell indexing ---------------------------------------------------------

def _axis_coords(x, origin, spacing, n):
    u = (np.asarray(x, dtype=np.float64) - origin) / spacing
    u = np.mod(u, n)
    # mod of a tiny negative value rounds up to n
    u = np.where(u >= n, u - n, u)
    i = np.floor(u)
    return i.astype(np.int64), u - i


def locate(x, y, z, grid: GridSpec):
    """Vectorised cell lookup.

    Returns ``(i, j, k, linear_id, dx_p, dy_p, dz_p)`` with the intra-cell
    coordinates in ``[0, 1)``.
    """
    x, y, z = (np.asarray(c, dtype=np.float64) for c in (x, y, z))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise CorruptStateError("non-finite particle position")
    ox, oy, oz = grid.origin
    i, dxp = _axis_coords(x, ox, grid.dx, grid.nx)
    j, dyp = _axis_coords(y, oy, grid.dy, grid.ny)
    k, dzp = _axis_coords(z, oz, grid.dz, grid.nz)
    return i, j, k, grid.linear_id(i, j, k), dxp, dyp, dzp


def cell_ids(x, y, z, grid: GridSpec) -> np.ndarray:
    return locate(x, y, z, grid)[3]


def cell_of(position: Sequence[float], grid: GridSpec):
    """Cell of a single position: ``((i, j, k), linear_id)``."""
    i, j, k, lin, *_ = locate(*position, grid)
    return (int(i), int(j), int(k)), int(lin)


def intra_cell_coords(position: Sequence[float], grid: GridSpec):
    *_, dxp, dyp, dzp = locate(*position, grid)
    return float(dxp), float(dyp), float(dzp)


# -- particles -------------------------------------------------------------

_SOA_FIELDS = ("x", "y", "z", "vx", "vy", "vz", "q", "w", "id")


@dataclass
class ParticleSoA:
    """Structure-of-arrays particle store; every field has length ``count``."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    vz: np.ndarray
    q: np.ndarray
    w: np.ndarray
    id: np.ndarray

    def __post_init__(self):
        for name in _SOA_FIELDS[:-1]:
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        self.id = np.ascontiguousarray(self.id, dtype=np.int64)
        n = len(self.x)
        if any(len(getattr(self, name)) != n for name in _SOA_FIELDS):
            raise ValueError("particle arrays must share one length")

    @classmethod
    def empty(cls) -> "ParticleSoA":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z, z, np.zeros(0, dtype=np.int64))

    @classmethod
    def from_arrays(cls, positions, velocities, q=1.0, w=1.0, ids=None) -> "ParticleSoA":
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        velocities = np.atleast_2d(np.asarray(velocities, dtype=np.float64))
        n = positions.shape[0]
        q = np.broadcast_to(np.asarray(q, dtype=np.float64), (n,)).copy()
        w = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,)).copy()
        ids = np.arange(n) if ids is None else ids
        return cls(*positions.T, *velocities.T, q, w, ids)

    @property
    def count(self) -> int:
        return len(self.x)

    def __len__(self) -> int:
        return self.count

    def copy(self) -> "ParticleSoA":
        return ParticleSoA(*(getattr(self, f).copy() for f in _SOA_FIELDS))

    def permute(self, order: np.ndarray) -> None:
        """Physically reorder every array in place."""
        for name in _SOA_FIELDS:
            setattr(self, name, getattr(self, name)[order])

    def concat(self, other: "ParticleSoA") -> "ParticleSoA":
        return ParticleSoA(*(np.concatenate([getattr(self, f), getattr(other, f)])
                             for f in _SOA_FIELDS))

    def sorted_by_id(self) -> "ParticleSoA":
        out = self.copy()
        out.permute(np.argsort(self.id, kind="stable"))
        return out

    def cells(self, grid: GridSpec) -> np.ndarray:
        return cell_ids(self.x, self.y, self.z, grid)

    def speeds(self) -> np.ndarray:
        return np.sqrt(self.vx**2 + self.vy**2 + self.vz**2)


@dataclass
class CurrentGrid:
    """Nodal current density, one flat array per component (periodic, collocated)."""

    grid: GridSpec
    jx: np.ndarray = None
    jy: np.ndarray = None
    jz: np.ndarray = None

    def __post_init__(self):
        n = self.grid.n_cells
        for name in ("jx", "jy", "jz"):
            arr = getattr(self, name)
            setattr(self, name, np.zeros(n) if arr is None else np.asarray(arr, dtype=np.float64))

    @property
    def components(self) -> tuple:
        return (self.jx, self.jy, self.jz)

    def as_array(self) -> np.ndarray:
        return np.stack(self.components)

    def checksum(self) -> tuple:
        return tuple(float(c.sum()) for c in self.components)

    def copy(self) -> "CurrentGrid":
        return CurrentGrid(self.grid, self.jx.copy(), self.jy.copy(), self.jz.copy())

    def __iadd__(self, other: "CurrentGrid") -> "CurrentGrid":
        for mine, theirs in zip(self.components, other.components):
            mine += theirs
        return self


# -- workloads -------------------------------------------------------------

class WorkloadKind(enum.Enum):
    UNIFORM_PLASMA = "uniform"
    DRIFT_GRADIENT = "drift"

    @classmethod
    def parse(cls, text: str) -> "WorkloadKind":
        key = text.strip().lower().replace("_", "").replace("-", "")
        aliases = {"uniform": cls.UNIFORM_PLASMA, "uniformplasma": cls.UNIFORM_PLASMA,
                   "drift": cls.DRIFT_GRADIENT, "driftgradient": cls.DRIFT_GRADIENT}
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown workload kind {text!r}") from None


def default_dt(grid: GridSpec, cfl: float = 1.0, c: float = 1.0) -> float:
    """Courant-limited step for light speed ``c`` in simulation units."""
    return cfl / (c * math.sqrt(sum(1.0 / d**2 for d in grid.spacing)))


@dataclass
class WorkloadConfig:
    grid: GridSpec
    ppc: int = 8
    kind: WorkloadKind = WorkloadKind.UNIFORM_PLASMA
    thermal_speed: float = 0.01
    drift_velocity: Optional[tuple] = None
    drift_gradient: float = 0.1
    seed: int = 0
    steps: int = 100
    dt: Optional[float] = None
    charge: float = -1.0
    weight: float = 1.0

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = WorkloadKind.parse(self.kind)
        if self.dt is None:
            self.dt = default_dt(self.grid)
        self.validate()

    def validate(self) -> None:
        if int(self.ppc) != self.ppc or self.ppc < 1:
            raise ConfigError(f"ppc must be an integer >= 1, got {self.ppc}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.thermal_speed < 0:
            raise ConfigError("thermal_speed must be >= 0")
        if self.weight < 0:
            raise ConfigError("weight must be >= 0")
        if self.drift_velocity is not None and len(self.drift_velocity) != 3:
            raise ConfigError("drift_velocity must be a 3-vector")
        if not 0 <= self.drift_gradient < 1:
            raise ConfigError("drift_gradient must lie in [0, 1)")

    def resolved_drift(self) -> np.ndarray:
        if self.drift_velocity is not None:
            return np.asarray(self.drift_velocity, dtype=np.float64)
        return np.array([0.5 * self.grid.min_spacing / self.dt, 0.0, 0.0])


def sublattice(ppc: int) -> tuple:
    """Factor ``ppc`` into a near-cubic ``(ax, ay, az)`` lattice, ``ax >= ay >= az``."""
    best = None
    for a in range(1, ppc + 1):
        if ppc % a:
            continue
        for b in range(1, a + 1):
            if (ppc // a) % b:
                continue
            c = ppc // (a * b)
            if c > b:
                continue
            key = (a - c, a)
            if best is None or key < best[0]:
                best = (key, (a, b, c))
    return best[1]


def box_muller(gen: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normal samples from pairs of uniforms."""
    m = (n + 1) // 2
    u1 = 1.0 - gen.random(m)  # (0, 1], keeps log finite
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * m)
    out[0::2] = r * np.cos(2 * np.pi * u2)
    out[1::2] = r * np.sin(2 * np.pi * u2)
    return out[:n]


def make_workload(config: WorkloadConfig) -> ParticleSoA:
    grid = config.grid
    n = config.ppc * grid.n_cells
    if n > MAX_PARTICLES:
        raise CapacityError(f"{n} particles exceed the addressable limit {MAX_PARTICLES}")

    ax, ay, az = sublattice(config.ppc)
    # lattice offsets inside one cell, x fastest
    oz, oy, ox = np.meshgrid((np.arange(az) + 0.5) / az, (np.arange(ay) + 0.5) / ay,
                             (np.arange(ax) + 0.5) / ax, indexing="ij")
    cells = np.arange(grid.n_cells)
    ci, cj, ck = grid.unravel(cells)
    x = grid.origin[0] + (ci[:, None] + ox.ravel()[None, :]) * grid.dx
    y = grid.origin[1] + (cj[:, None] + oy.ravel()[None, :]) * grid.dy
    z = grid.origin[2] + (ck[:, None] + oz.ravel()[None, :]) * grid.dz
    x, y, z = x.ravel(), y.ravel(), z.ravel()

    gen = np.random.Generator(np.random.Philox(config.seed))
    v = config.thermal_speed * box_muller(gen, 3 * n).reshape(3, n)

    if config.kind is WorkloadKind.DRIFT_GRADIENT:
        drift = config.resolved_drift()
        # shear profile along the axis the drift moves least in, so the
        # modulating coordinate is (nearly) conserved and density stays flat
        axis = int(np.flatnonzero(np.abs(drift) == np.abs(drift).min())[-1])
        coord = (x, y, z)[axis]
        phase = 2 * np.pi * (coord - grid.origin[axis]) / grid.lengths[axis]
        profile = 1.0 + config.drift_gradient * np.sin(phase)
        v += drift[:, None] * profile[None, :]

    particles = ParticleSoA(x, y, z, v[0], v[1], v[2],
                            np.full(n, config.charge), np.full(n, config.weight),
                            np.arange(n, dtype=np.int64))
    if n and particles.speeds().max() * config.dt > grid.min_spacing:
        raise CflViolation("sampled velocities violate the one-cell-per-step cap; reduce dt")
    return particles


def _wrap(x, origin, length):
    r = np.mod(x - origin, length)
    r = np.where(r >= length, r - length, r)
    return origin + r


def advance(particles: ParticleSoA, dt: float, grid: GridSpec) -> float:
    """Ballistic push ``x += v*dt`` with periodic wrap; returns the fraction that changed cell."""
    n = particles.count
    if n == 0:
        return 0.0
    if particles.speeds().max() * dt > grid.min_spacing:
        raise CflViolation("max |v|*dt exceeds the minimum cell size")
    before = particles.cells(grid)
    (ox, oy, oz), (lx, ly, lz) = grid.origin, grid.lengths
    particles.x = _wrap(particles.x + particles.vx * dt, ox, lx)
    particles.y = _wrap(particles.y + particles.vy * dt, oy, ly)
    particles.z = _wrap(particles.z + particles.vz * dt, oz, lz)
    after = particles.cells(grid)
    return float(np.count_nonzero(before != after)) / n
