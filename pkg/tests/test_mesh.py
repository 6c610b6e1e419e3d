import numpy as np
import pytest

from ugkp.mesh import (BoundarySpec, MacroFields, MaterialRegion, Mesh2D,
                       T_FLOOR, assign_regions, radiation_temperature)
from ugkp.radiometry import OpacityModel, PhysConstants

AC = PhysConstants().a * PhysConstants().c


def test_locate_cell_basic():
    m = Mesh2D.uniform(2, 2, (0, 1, 0, 1))
    assert m.locate_cell((0.25, 0.75)) == (0, 1)


def test_locate_cell_half_open_interior_edge():
    m = Mesh2D.uniform(2, 2, (0, 1, 0, 1))
    assert m.locate_cell((0.5, 0.1))[0] == 1


def test_locate_cell_domain_corner_closure():
    m = Mesh2D.uniform(2, 2, (0, 1, 0, 1))
    assert m.locate_cell((1.0, 1.0)) == (1, 1)


def test_locate_cell_outside():
    m = Mesh2D.uniform(2, 2, (0, 1, 0, 1))
    with pytest.raises(ValueError):
        m.locate_cell((1.5, 0.5))


def test_mesh_validation_and_volumes():
    with pytest.raises(ValueError):
        Mesh2D(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0]))
    m = Mesh2D(np.array([0.0, 0.3, 1.0]), np.array([0.0, 0.5, 0.9, 2.0]))
    vols = m.volumes()
    assert np.all(vols > 0)
    assert vols.sum() == pytest.approx(1.0 * 2.0, rel=1e-12)


def test_radiation_temperature_values():
    assert radiation_temperature(AC) == pytest.approx(1.0, rel=1e-14)
    assert radiation_temperature(0.0) == 0.0
    assert radiation_temperature(16 * AC) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        radiation_temperature(-1.0)


def test_region_assignment_total_and_overlap():
    m = Mesh2D.uniform(4, 4, (0, 1, 0, 1))
    vac = MaterialRegion(OpacityModel.gray_constant(1e-8), 1e-4)
    wall = MaterialRegion(OpacityModel.gray_power_law(100, 3), 0.3,
                          rects=((0.0, 0.5, 0.0, 1.0),))
    rid = assign_regions(m, [vac, wall])
    assert np.all(rid >= 0)
    assert set(np.unique(rid)) == {0, 1}
    # overlap between different regions is rejected
    wall2 = MaterialRegion(OpacityModel.gray_constant(5.0), 0.3,
                           rects=((0.25, 0.75, 0.0, 1.0),))
    with pytest.raises(ValueError):
        assign_regions(m, [wall, wall2])
    # uncovered cell with no background is rejected
    with pytest.raises(ValueError):
        assign_regions(m, [wall])


def test_boundary_periodic_pairing():
    with pytest.raises(ValueError):
        BoundarySpec(left=("periodic", 0.0), right=("reflective", 0.0))
    spec = BoundarySpec(left=("periodic", 0.0), right=("periodic", 0.0))
    assert spec.edge("left")[0] == "periodic"
    with pytest.raises(ValueError):
        BoundarySpec(left=("inflow-planck", 0.0))


def test_macrofields_equilibrium_consistency():
    T = np.array([1e-3, 0.5, 2.0])
    f = MacroFields.equilibrium(T)
    assert np.allclose(f.Ur, AC * f.T**4, rtol=1e-12)
    assert np.allclose(f.rho, f.Ur, rtol=1e-15)
    f.set_from_Ur(np.array([-1.0, AC, 16 * AC]))
    assert f.T[0] == T_FLOOR
    assert f.T[1] == pytest.approx(1.0, rel=1e-12)
    assert f.T[2] == pytest.approx(2.0, rel=1e-12)
