import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pictile.domain import (GridSpec, ParticleSoA, WorkloadConfig, WorkloadKind, advance,
                            cell_of, default_dt, intra_cell_coords, locate, make_workload,
                            sublattice)
from pictile.errors import CapacityError, CflViolation, ConfigError, CorruptStateError


def test_cell_of_lower_corner():
    assert cell_of((0.0, 0.0, 0.0), GridSpec.cubic(1)) == ((0, 0, 0), 0)


def test_cell_of_periodic_wrap():
    g = GridSpec(4, 3, 2, dx=0.5)
    assert cell_of((4 * 0.5, 0.0, 0.0), g) == ((0, 0, 0), 0)


def test_cell_of_hand_evaluated():
    assert cell_of((2.5, 1.2, 3.9), GridSpec.cubic(4)) == ((2, 1, 3), 54)


def test_cell_of_with_origin_and_negative_wrap():
    g = GridSpec(4, 4, 4, origin=(-2.0, 0.0, 0.0))
    assert cell_of((-2.0, 0.0, 0.0), g)[0] == (0, 0, 0)
    assert cell_of((-2.5, 0.0, 0.0), g)[0] == (3, 0, 0)
    # tiny negative offsets must not produce index n
    (i, _, _), _ = cell_of((-2.0 - 1e-18, 0.0, 0.0), g)
    assert 0 <= i < 4


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_cell_of_nonfinite_is_corrupt_state(bad):
    with pytest.raises(CorruptStateError):
        cell_of((bad, 0.0, 0.0), GridSpec.cubic(4))


def test_intra_cell_coords():
    g = GridSpec.cubic(4)
    assert intra_cell_coords((1.0, 2.0, 3.0), g) == (0.0, 0.0, 0.0)
    assert intra_cell_coords((2.25, 0.5, 0.75), g) == (0.25, 0.5, 0.75)
    d = intra_cell_coords((np.nextafter(2.0, 0.0), 0.0, 0.0), g)
    assert 0.0 <= d[0] < 1.0


def test_boundary_point_belongs_to_higher_cell():
    assert cell_of((1.0, 0.0, 0.0), GridSpec.cubic(4))[0] == (1, 0, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
       st.sampled_from([0.5, 1.0, 1.7]))
def test_reconstruction_property(x, y, z, h):
    g = GridSpec(5, 6, 7, h, h, h, origin=(0.25, -1.0, 3.0))
    i, j, k, _, dxp, dyp, dzp = locate(np.array([x]), np.array([y]), np.array([z]), g)
    for coord, idx, d, o, length in zip((x, y, z), (i, j, k), (dxp, dyp, dzp), g.origin, g.lengths):
        assert 0.0 <= d[0] < 1.0
        rebuilt = o + (idx[0] + d[0]) * h
        # compare modulo the box length
        delta = (rebuilt - coord) % length
        assert min(delta, length - delta) <= 1e-9 * max(1.0, abs(coord))


def test_linear_id_is_bijection():
    g = GridSpec(3, 4, 5)
    i, j, k = np.meshgrid(range(3), range(4), range(5), indexing="ij")
    ids = g.linear_id(i.ravel(), j.ravel(), k.ravel())
    assert sorted(ids.tolist()) == list(range(60))
    assert all(np.array_equal(a, b) for a, b in zip(g.unravel(ids), (i.ravel(), j.ravel(), k.ravel())))


@pytest.mark.parametrize("kwargs", [dict(nx=0, ny=1, nz=1), dict(nx=2, ny=2, nz=2, dx=0.0),
                                    dict(nx=2, ny=2, nz=2, boundary="pec")])
def test_gridspec_rejects_bad_geometry(kwargs):
    with pytest.raises(ConfigError):
        GridSpec(**kwargs)


def test_make_workload_one_per_cell():
    p = make_workload(WorkloadConfig(GridSpec.cubic(2), ppc=1))
    assert p.count == 8
    assert sorted(p.cells(GridSpec.cubic(2)).tolist()) == list(range(8))


def test_make_workload_counts_per_cell():
    g = GridSpec.cubic(8)
    p = make_workload(WorkloadConfig(g, ppc=8))
    assert p.count == 4096
    assert np.all(np.bincount(p.cells(g), minlength=g.n_cells) == 8)


def test_make_workload_deterministic():
    cfg = WorkloadConfig(GridSpec.cubic(4), ppc=8, seed=11, kind=WorkloadKind.DRIFT_GRADIENT)
    a, b = make_workload(cfg), make_workload(cfg)
    for name in ("x", "y", "z", "vx", "vy", "vz", "q", "w", "id"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    c = make_workload(WorkloadConfig(GridSpec.cubic(4), ppc=8, seed=12))
    assert not np.array_equal(a.vx, c.vx)


def test_make_workload_capacity_error():
    with pytest.raises(CapacityError):
        make_workload(WorkloadConfig(GridSpec.cubic(2048), ppc=512))


def test_maxwellian_spread_matches_thermal_speed():
    g = GridSpec.cubic(8)
    p = make_workload(WorkloadConfig(g, ppc=64, thermal_speed=0.01, seed=3))
    for v in (p.vx, p.vy, p.vz):
        assert abs(v.std() - 0.01) < 0.0005
        assert abs(v.mean()) < 0.0005


@pytest.mark.parametrize("ppc,expected", [(1, (1, 1, 1)), (8, (2, 2, 2)), (64, (4, 4, 4)),
                                          (128, (8, 4, 4)), (4, (2, 2, 1))])
def test_sublattice(ppc, expected):
    assert sublattice(ppc) == expected


def test_drift_workload_crosses_about_half():
    g = GridSpec.cubic(8)
    cfg = WorkloadConfig(g, ppc=64, kind="drift", seed=1)
    p = make_workload(cfg)
    moved = advance(p, cfg.dt, g)
    assert 0.35 < moved < 0.65
    # shear profile keeps density flat
    counts = np.bincount(p.cells(g), minlength=g.n_cells)
    assert counts.min() >= 48 and counts.max() <= 80


def test_default_dt_is_cfl_one():
    assert default_dt(GridSpec.cubic(4)) == pytest.approx(1 / math.sqrt(3))


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        WorkloadConfig(GridSpec.cubic(2), ppc=0)
    with pytest.raises(ConfigError):
        WorkloadConfig(GridSpec.cubic(2), dt=-1.0)


def test_cfl_violation_on_workload():
    with pytest.raises(CflViolation):
        make_workload(WorkloadConfig(GridSpec.cubic(4), ppc=1, thermal_speed=10.0, dt=1.0))


def test_advance_zero_velocity():
    g = GridSpec.cubic(4)
    p = make_workload(WorkloadConfig(g, ppc=8, thermal_speed=0.0))
    before = p.copy()
    assert advance(p, 0.5, g) == 0.0
    assert np.array_equal(p.x, before.x) and np.array_equal(p.z, before.z)


def test_advance_single_particle_trace():
    g = GridSpec.cubic(4)
    pos = [[0.5 + c, 0.5, 0.5] for c in range(4)]
    vel = [[1.0, 0, 0]] + [[0.0, 0, 0]] * 3
    p = ParticleSoA.from_arrays(pos, vel)
    frac = advance(p, 1.0, g)
    assert frac == pytest.approx(1 / 4)
    assert p.x[0] == pytest.approx(1.5)


def test_advance_periodic_wrap():
    g = GridSpec.cubic(4)
    p = ParticleSoA.from_arrays([[3.75, 0.5, 0.5]], [[0.5, 0, 0]])
    advance(p, 1.0, g)
    assert cell_of((p.x[0], p.y[0], p.z[0]), g)[0] == (0, 0, 0)


def test_advance_rejects_cap_violation():
    p = ParticleSoA.from_arrays([[0.5, 0.5, 0.5]], [[2.0, 0, 0]])
    with pytest.raises(CflViolation):
        advance(p, 1.0, GridSpec.cubic(4))


def test_advance_preserves_count_and_ids():
    g = GridSpec.cubic(6)
    cfg = WorkloadConfig(g, ppc=8, kind="drift", seed=5)
    p = make_workload(cfg)
    ids = np.sort(p.id)
    for _ in range(5):
        advance(p, cfg.dt, g)
    assert p.count == 6**3 * 8
    assert np.array_equal(np.sort(p.id), ids)
    i, j, k, *_ = locate(p.x, p.y, p.z, g)
    assert i.max() < 6 and i.min() >= 0


def test_soa_length_mismatch():
    with pytest.raises(ValueError):
        ParticleSoA(np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2),
                    np.zeros(1), np.zeros(2), np.zeros(2), np.arange(2))
