import numpy as np
import pytest

from gridedge.feeder import HEAD_SENSOR, LATERAL_SENSOR, build_admittance, radial_feeder, stock_feeder, two_bus_feeder
from gridedge.feeder.builder import line_admittance, nominal_voltage
from gridedge.feeder.linearize import linearize
from gridedge.shared.exceptions import BadParameter


def test_nominal_voltage_is_balanced():
    v = nominal_voltage()
    np.testing.assert_allclose(np.abs(v), 230.0)
    assert abs(v.sum()) < 1e-9


def test_line_admittance_inverts_the_impedance():
    y = line_admittance(100.0)
    z = np.full((3, 3), 0.05 + 0.18j)
    np.fill_diagonal(z, 0.28 + 0.30j)
    np.testing.assert_allclose(y @ (z * 0.1), np.eye(3), atol=1e-9)
    with pytest.raises(BadParameter):
        line_admittance(0.0)


def test_stock_feeder_layout():
    desc = stock_feeder()
    assert desc.name == "stock4"
    assert desc.n_loads == 4
    assert [s.kind for s in desc.sensors] == [HEAD_SENSOR, LATERAL_SENSOR, LATERAL_SENSOR]
    assert [(load.bus, load.phase) for load in desc.loads_by_index()] == [
        ("n2", "a"),
        ("n2", "b"),
        ("n3", "a"),
        ("n3", "c"),
    ]


def test_stock_and_radial_feeders_run_at_primary_voltage():
    for desc in (stock_feeder(), radial_feeder(5, 2)):
        np.testing.assert_allclose(np.abs(build_admittance(desc).v0), 7200.0)
    secondary = build_admittance(stock_feeder(voltage=230.0))
    np.testing.assert_allclose(np.abs(secondary.v0), 230.0)


def test_lossless_feeder_has_reactive_lines():
    desc = stock_feeder(lossless=True)
    assert desc.name == "stock4-lossless"
    for line in desc.lines:
        np.testing.assert_allclose(line.y.real, 0.0, atol=1e-9)


def test_two_bus_feeder():
    desc = two_bus_feeder(0.1 + 0.1j, phase="b")
    assert desc.loads[0].phase == "b"
    assert desc.lines[0].y[0, 0] == pytest.approx(1.0 / (0.1 + 0.1j))
    with pytest.raises(BadParameter):
        two_bus_feeder(0.0)


@pytest.mark.parametrize("n_houses,n_laterals", [(1, 1), (10, 2), (20, 6), (3, 5)])
def test_radial_feeder_is_consistent(n_houses, n_laterals):
    desc = radial_feeder(n_houses, n_laterals)
    adm = build_admittance(desc)
    assert desc.n_loads == n_houses
    laterals = [s for s in desc.sensors if s.kind == LATERAL_SENSOR]
    assert len(laterals) == min(n_laterals, n_houses)
    covered = sorted(i for s in laterals for i in s.downstream)
    assert covered == list(range(1, n_houses + 1))
    # declared downstream sets agree with the tree
    linearize(adm, None, desc.sensors)


def test_radial_feeder_round_robin():
    desc = radial_feeder(7, 3)
    laterals = [s for s in desc.sensors if s.kind == LATERAL_SENSOR]
    assert laterals[0].downstream == [1, 4, 7]
    assert laterals[1].downstream == [2, 5]
    with pytest.raises(BadParameter):
        radial_feeder(0, 1)
