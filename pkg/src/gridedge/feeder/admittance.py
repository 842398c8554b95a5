import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Tuple

import networkx as nx
import numpy as np
from scipy.linalg import lu_factor, lu_solve

from gridedge.feeder.models import FeederDescription
from gridedge.shared.constants import PHASES
from gridedge.shared.exceptions import ModelError, TopologyError


logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class Branch:
    """Upstream series element of a bus in the feeder tree.

    ``upstream`` and ``downstream`` hold node positions inside the PQ-bus
    block (-1 when the node belongs to the reference bus).
    """

    parent: str
    bus: str
    phases: Tuple[str, ...]
    y: np.ndarray
    upstream: Tuple[int, ...]
    downstream: Tuple[int, ...]


@dataclass(frozen=True)
class AdmittanceModel:
    """Nodal admittance matrix with the reference-bus partitions.

    Node order puts the three reference phases first, followed by every
    present phase of the PQ buses in description order. ``YLL`` is factored
    once at construction and reused by every solve.
    """

    Y: np.ndarray
    nodes: Tuple[Tuple[str, str], ...]
    v0: np.ndarray
    reference: str
    load_positions: np.ndarray
    branches: Dict[str, Branch]
    downstream_loads: Dict[str, FrozenSet[int]]
    condition: float
    _lu: Tuple[np.ndarray, np.ndarray] = field(repr=False, compare=False)

    @property
    def n_ref(self) -> int:
        return len(PHASES)

    @property
    def n_nodes(self) -> int:
        return self.Y.shape[0] - self.n_ref

    @property
    def n_loads(self) -> int:
        return len(self.load_positions)

    @property
    def Y00(self) -> np.ndarray:
        return self.Y[: self.n_ref, : self.n_ref]

    @property
    def Y0L(self) -> np.ndarray:
        return self.Y[: self.n_ref, self.n_ref :]

    @property
    def Y0(self) -> np.ndarray:
        return self.Y[: self.n_ref, :]

    @property
    def YL(self) -> np.ndarray:
        return self.Y[self.n_ref :, :]

    @property
    def YL0(self) -> np.ndarray:
        return self.Y[self.n_ref :, : self.n_ref]

    @property
    def YLL(self) -> np.ndarray:
        return self.Y[self.n_ref :, self.n_ref :]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply YLL^-1 using the cached LU factorization."""
        return lu_solve(self._lu, rhs)

    def node_position(self, bus: str, phase: str) -> int:
        """Position of a PQ-bus node inside the YLL block."""
        return self.nodes.index((bus, phase)) - self.n_ref

    def injection_from_demand(self, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Complex nodal injections for load-node demand vectors (length N)."""
        s = np.zeros(self.n_nodes, dtype=complex)
        np.add.at(s, self.load_positions, -(np.asarray(p) + 1j * np.asarray(q)))
        return s


def _feeder_graph(desc: FeederDescription) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(bus.id for bus in desc.buses)
    for line in desc.lines:
        if graph.has_edge(line.from_bus, line.to_bus):
            raise TopologyError(
                f"parallel lines between '{line.from_bus}' and '{line.to_bus}'"
            )
        graph.add_edge(line.from_bus, line.to_bus, line=line)
    return graph


def _isolated_buses(Y: np.ndarray, nodes, n_ref: int) -> List[str]:
    """Buses holding nodes with no admittance path to a reference node."""
    node_graph = nx.Graph()
    node_graph.add_nodes_from(range(len(nodes)))
    rows, cols = np.nonzero(np.abs(Y) > 0)
    node_graph.add_edges_from((i, j) for i, j in zip(rows, cols) if i < j)
    reachable = set()
    for ref_node in range(n_ref):
        reachable |= nx.node_connected_component(node_graph, ref_node)
    return sorted({nodes[i][0] for i in range(len(nodes)) if i not in reachable})


def build_admittance(desc: FeederDescription) -> AdmittanceModel:
    """Assemble the nodal admittance matrix of a feeder.

    Diagonal blocks accumulate incident line admittances, off-diagonal blocks
    hold the negated series admittances.

    Raises:
        TopologyError: the bus graph is disconnected.
        ModelError: YLL is singular; the error names the offending buses.
    """
    graph = _feeder_graph(desc)
    if not nx.is_connected(graph):
        components = [sorted(c) for c in nx.connected_components(graph)]
        raise TopologyError(f"feeder graph is disconnected: components {components}")

    reference = desc.reference.id
    nodes = [(reference, phase) for phase in PHASES]
    for bus in desc.buses:
        if bus.is_reference:
            continue
        nodes.extend((bus.id, phase) for phase in PHASES if phase in bus.phases)
    index = {node: i for i, node in enumerate(nodes)}
    n_ref = len(PHASES)

    Y = np.zeros((len(nodes), len(nodes)), dtype=complex)
    for line in desc.lines:
        f = [index[(line.from_bus, phase)] for phase in line.phases]
        t = [index[(line.to_bus, phase)] for phase in line.phases]
        y = line.y
        Y[np.ix_(f, f)] += y
        Y[np.ix_(t, t)] += y
        Y[np.ix_(f, t)] -= y
        Y[np.ix_(t, f)] -= y

    YLL = Y[n_ref:, n_ref:]
    isolated = _isolated_buses(Y, nodes, n_ref)
    condition = float(np.linalg.cond(YLL)) if YLL.size else 1.0
    if isolated or not np.isfinite(condition) or condition > CONDITION_LIMIT:
        buses = isolated or sorted({bus for bus, _ in nodes[n_ref:]})
        raise ModelError(
            f"YLL is singular (condition {condition:.3e}); check buses {buses}",
            buses=buses,
            condition=condition,
        )

    tree = nx.bfs_tree(graph, reference)
    branches: Dict[str, Branch] = {}
    for parent, child in tree.edges():
        line = graph.edges[parent, child]["line"]
        # admittance blocks are symmetric, so orientation only fixes the ends
        up = tuple(
            index[(parent, phase)] - n_ref if parent != reference else -1
            for phase in line.phases
        )
        down = tuple(index[(child, phase)] - n_ref for phase in line.phases)
        branches[child] = Branch(
            parent=parent,
            bus=child,
            phases=tuple(line.phases),
            y=line.y,
            upstream=up,
            downstream=down,
        )

    loads = desc.loads_by_index()
    load_positions = np.array(
        [index[(load.bus, load.phase)] - n_ref for load in loads], dtype=int
    )
    loads_at_bus: Dict[str, set] = {}
    for load in loads:
        loads_at_bus.setdefault(load.bus, set()).add(load.index)
    downstream_loads = {}
    for bus in tree.nodes():
        covered = set()
        for member in nx.descendants(tree, bus) | {bus}:
            covered |= loads_at_bus.get(member, set())
        downstream_loads[bus] = frozenset(covered)

    logger.debug(
        f"built admittance model '{desc.name}': {len(nodes)} nodes, "
        f"{len(loads)} loads, cond(YLL)={condition:.3e}"
    )
    return AdmittanceModel(
        Y=Y,
        nodes=tuple(nodes),
        v0=desc.reference_voltage,
        reference=reference,
        load_positions=load_positions,
        branches=branches,
        downstream_loads=downstream_loads,
        condition=condition,
        _lu=lu_factor(YLL),
    )


def node_load_matrix(adm: AdmittanceModel) -> np.ndarray:
    """Selection matrix mapping load-node vectors (N) onto PQ-bus nodes."""
    E = np.zeros((adm.n_nodes, adm.n_loads))
    E[adm.load_positions, np.arange(adm.n_loads)] = 1.0
    return E
