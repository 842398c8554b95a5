import numpy as np
import pytest

from gridedge.feeder import BusRecord, build_admittance, radial_feeder, stock_feeder
from gridedge.feeder.admittance import node_load_matrix
from gridedge.shared.exceptions import TopologyError


def incidence_admittance(desc, nodes):
    """Y = sum over lines of C^T y C with C the signed phase incidence."""
    index = {node: i for i, node in enumerate(nodes)}
    Y = np.zeros((len(nodes), len(nodes)), dtype=complex)
    for line in desc.lines:
        C = np.zeros((len(line.phases), len(nodes)))
        for row, phase in enumerate(line.phases):
            C[row, index[(line.from_bus, phase)]] = 1.0
            C[row, index[(line.to_bus, phase)]] = -1.0
        Y += C.T @ line.y @ C
    return Y


@pytest.mark.parametrize("desc", [stock_feeder(), radial_feeder(7, 3)])
def test_admittance_matches_incidence_oracle(desc):
    adm = build_admittance(desc)
    np.testing.assert_allclose(adm.Y, incidence_admittance(desc, adm.nodes), atol=1e-9)


def test_admittance_is_symmetric_and_shunt_free(stock_adm):
    np.testing.assert_allclose(stock_adm.Y, stock_adm.Y.T, atol=1e-9)
    np.testing.assert_allclose(stock_adm.Y.sum(axis=1), 0.0, atol=1e-8)


def test_partitions_and_node_order(stock_adm):
    assert stock_adm.nodes[:3] == (("sub", "a"), ("sub", "b"), ("sub", "c"))
    assert stock_adm.n_nodes == 9
    assert stock_adm.YLL.shape == (9, 9)
    assert stock_adm.Y0L.shape == (3, 9)


def test_cached_solve_inverts_yll(stock_adm, rng):
    rhs = rng.standard_normal(9) + 1j * rng.standard_normal(9)
    np.testing.assert_allclose(stock_adm.YLL @ stock_adm.solve(rhs), rhs, atol=1e-8)


def test_load_positions_follow_load_indices(stock_adm):
    assert stock_adm.n_loads == 4
    assert stock_adm.load_positions[0] == stock_adm.node_position("n2", "a")
    assert stock_adm.load_positions[3] == stock_adm.node_position("n3", "c")
    E = node_load_matrix(stock_adm)
    assert E.shape == (9, 4)
    np.testing.assert_array_equal(E.sum(axis=0), np.ones(4))


def test_downstream_load_sets(stock_adm):
    assert stock_adm.downstream_loads["sub"] == frozenset({1, 2, 3, 4})
    assert stock_adm.downstream_loads["n2"] == frozenset({1, 2})
    assert stock_adm.downstream_loads["n3"] == frozenset({3, 4})
    assert stock_adm.branches["n2"].parent == "n1"
    assert stock_adm.branches["n1"].upstream == (-1, -1, -1)


def test_disconnected_feeder_is_rejected(stock):
    broken = stock.model_copy(update={"buses": stock.buses + [BusRecord(id="island")]})
    with pytest.raises(TopologyError, match="disconnected"):
        build_admittance(broken)


def test_injection_from_demand_negates_consumption(stock_adm):
    s = stock_adm.injection_from_demand(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.5, 0.0, 0.0, 1.0]))
    assert s[stock_adm.node_position("n2", "a")] == pytest.approx(-1.0 - 0.5j)
    assert s[stock_adm.node_position("n3", "c")] == pytest.approx(-4.0 - 1.0j)
    assert np.count_nonzero(s) == 4
