"""Descomposicion espacial del modelo global en subsistemas por sensor.

Cada sensor l recibe un conjunto de corte (cut-point set) de estados, ordenado
por indice global ascendente, y el modelo reducido que lo gobierna:

    x^(l)_{k+1} = F^(l) x^(l)_k + D^(l) d^(l)_k + G^(l) u^(l)_k
    y^(l)_k     = H^(l) x^(l)_k + w^(l)_k

donde d^(l) son los estados fuera del conjunto que entran en sus filas de F.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import sparse

from dkf.errors import BandError, ModelError, TopologyError
from dkf.model_core import GlobalModel
from utils.export import write_csv, write_json
from utils.logging_utils import get_logger

Cutset = Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class SystemDigraph:
    """Digrafo del sistema: arista x_c -> x_i si F[i, c] != 0 y u_m -> x_i si G[i, m] != 0."""

    n: int
    noise_dim: int
    E: np.ndarray
    graph: nx.DiGraph

    def state_graph(self) -> nx.Graph:
        """Grafo no dirigido entre estados (sin ruido ni lazos)."""

        undirected = nx.Graph()
        undirected.add_nodes_from(range(self.n))
        rows, cols = np.nonzero(self.E[:, : self.n])
        undirected.add_edges_from((int(r), int(c)) for r, c in zip(rows, cols) if r != c)
        return undirected


@dataclass(frozen=True, eq=False)
class SubSystem:
    """Modelo reducido de un sensor sobre su conjunto de corte."""

    sensor_id: int
    cutset: np.ndarray
    n_total: int
    F_loc: np.ndarray
    D_loc: np.ndarray
    d_input_states: np.ndarray
    G_loc: np.ndarray
    noise_ids: np.ndarray
    Q_loc: np.ndarray
    H_red: np.ndarray
    R_l: np.ndarray

    @property
    def n_l(self) -> int:
        return int(self.cutset.size)

    @property
    def T_l(self) -> sparse.csr_matrix:
        """Matriz de seleccion n_l x n: x^(l) = T_l x."""

        return sparse.csr_matrix(
            (np.ones(self.n_l), (np.arange(self.n_l), self.cutset)), shape=(self.n_l, self.n_total)
        )

    def observation_information(self) -> np.ndarray:
        """I^(l) = H^(l)^T R_l^{-1} H^(l) en coordenadas locales."""

        return self.H_red.T @ np.linalg.solve(self.R_l, self.H_red)

    def observation_vector(self, y_l: np.ndarray) -> np.ndarray:
        """i^(l) = H^(l)^T R_l^{-1} y^(l); admite varias columnas (ensayos)."""

        return self.H_red.T @ np.linalg.solve(self.R_l, y_l)


@dataclass(frozen=True, eq=False)
class FusionTopology:
    """Grafo bipartito B, subgrafos de fusion G_j y grafo de comunicacion G."""

    bipartite: nx.Graph
    state_members: Dict[int, Tuple[int, ...]]
    holders: Dict[int, Tuple[int, ...]]
    comm_graph: nx.Graph
    weights: Dict[Tuple[int, ...], np.ndarray] = field(default_factory=dict)

    def members(self, state: int) -> Tuple[int, ...]:
        return self.state_members.get(state, ())

    def weight_matrix(self, members: Tuple[int, ...]) -> np.ndarray:
        """Pesos Metropolis del subgrafo inducido (se calculan y guardan bajo demanda)."""

        if members not in self.weights:
            self.weights[members] = metropolis_weights(self.comm_graph, members)
        return self.weights[members]

    def neighbors(self, sensor: int) -> List[int]:
        return sorted(self.comm_graph.neighbors(sensor))

    def edge_rows(self) -> List[Tuple[int, int]]:
        rows = [(node[1], other[1]) for node, other in self.bipartite.edges() if node[0] == "s"]
        rows += [(other[1], node[1]) for node, other in self.bipartite.edges() if node[0] == "x"]
        return sorted(rows)


# -----------------------------------------------------------------------------
# Digrafo y conjuntos de corte
# -----------------------------------------------------------------------------

def build_digraph(model: GlobalModel) -> SystemDigraph:
    """Patron binario E = [F | G] != 0 y digrafo asociado."""

    pattern = sparse.hstack([model.F, model.G]).tocsr()
    E = (pattern.toarray() != 0).astype(int)
    graph = nx.DiGraph()
    graph.add_nodes_from(("x", i) for i in range(model.n))
    graph.add_nodes_from(("u", m) for m in range(model.noise_dim))
    rows, cols = np.nonzero(E)
    for row, col in zip(rows, cols):
        source = ("x", int(col)) if col < model.n else ("u", int(col - model.n))
        graph.add_edge(source, ("x", int(row)))
    return SystemDigraph(n=model.n, noise_dim=model.noise_dim, E=E, graph=graph)


def _nearest_owner(
    state: int, sets: Sequence[set], distances: Sequence[Dict[int, int]]
) -> int:
    best = None
    for position, dist in enumerate(distances):
        if state in dist:
            key = (dist[state], position)
        else:
            # sin camino en el digrafo: distancia por indice
            gap = min(abs(state - member) for member in sets[position]) if sets[position] else 10**9
            key = (10**6 + gap, position)
        if best is None or key < best:
            best = key
    return best[1]


def cut_point_sets(model: GlobalModel, digraph: SystemDigraph | None = None) -> List[Cutset]:
    """Soporte de las columnas de H_l por sensor, ampliado para cubrir todos los estados.

    Los estados que ningun sensor observa se asignan al sensor mas cercano en el
    digrafo (empates al sensor de menor id).
    """

    digraph = digraph or build_digraph(model)
    sets = [set(np.flatnonzero(np.any(model.H_block(sid) != 0, axis=0)).tolist()) for sid in model.sensor_ids]
    covered = set().union(*sets)
    missing = sorted(set(range(model.n)) - covered)
    if missing:
        graph = digraph.state_graph()
        distances = [
            nx.multi_source_dijkstra_path_length(graph, members) if members else {} for members in sets
        ]
        for state in missing:
            sets[_nearest_owner(state, sets, distances)].add(state)
        get_logger(fase="descomposicion").info(
            "Estados no observados asignados por cercania: %s", missing
        )
    return [tuple(sorted(members)) for members in sets]


def _bfs_order(graph: nx.Graph, members: set, n: int) -> List[int]:
    """Estados fuera de ``members`` por distancia creciente (empates por indice)."""

    dist = nx.multi_source_dijkstra_path_length(graph, members) if members else {}
    reachable = sorted((d, node) for node, d in dist.items() if node not in members)
    order = [node for _, node in reachable]
    seen = set(order) | members
    rest = [node for node in range(n) if node not in seen]
    anchor = min(members) if members else 0
    order += sorted(rest, key=lambda node: (abs(node - anchor), node))
    return order


def extend_cutsets(sets: Sequence[Sequence[int]], L: int, digraph: SystemDigraph) -> List[Cutset]:
    """Amplia los conjuntos con menos de L estados hasta n_l = L.

    La ampliacion anade estados por crecimiento en anchura sobre el digrafo,
    primero el de menor indice. Los conjuntos que ya tienen L estados o mas
    no cambian.

    Raises:
        BandError: Si L > n.
    """

    n = digraph.n
    if L > n:
        raise BandError(f"L={L} supera la dimension n={n}")
    result = [set(members) for members in sets]
    if L <= 0:
        return [tuple(sorted(members)) for members in result]

    graph = digraph.state_graph()
    for members in result:
        if len(members) >= L:
            continue
        for state in _bfs_order(graph, set(members), n):
            if len(members) >= L:
                break
            members.add(state)
    return [tuple(sorted(members)) for members in result]


def cover_band_windows(sets: Sequence[Sequence[int]], L: int, n: int) -> List[Cutset]:
    """Garantiza que cada ventana {i, ..., i+L} quede entera dentro de algun conjunto.

    Una ventana descubierta se completa en el conjunto con mayor solape; los
    empates van al conjunto con menos estados y despues al de menor id.
    """

    result = [set(members) for members in sets]
    for start in range(0, n - L):
        window = set(range(start, start + L + 1))
        if any(window <= members for members in result):
            continue
        target = min(
            range(len(result)), key=lambda pos: (-len(window & result[pos]), len(result[pos]), pos)
        )
        result[target] |= window
    return [tuple(sorted(members)) for members in result]


def build_subsystem(model: GlobalModel, cutset: Sequence[int], sensor_id: int) -> SubSystem:
    """Extrae F^(l), D^(l), G^(l), Q^(l), H^(l) y R_l del conjunto de corte.

    Raises:
        ModelError: Si el conjunto esta vacio o H_l observa estados fuera de el.
    """

    C = np.array(sorted(set(int(i) for i in cutset)), dtype=int)
    if C.size == 0:
        raise ModelError(f"Conjunto de corte vacio para el sensor {sensor_id}")
    rows = model.F[C]
    inside = np.zeros(model.n, dtype=bool)
    inside[C] = True
    touched = np.unique(rows.nonzero()[1])
    d_states = np.array([c for c in touched if not inside[c]], dtype=int)
    F_loc = rows[:, C].toarray()
    D_loc = rows[:, d_states].toarray() if d_states.size else np.zeros((C.size, 0))

    G_rows = model.G[C]
    noise_ids = np.unique(G_rows.nonzero()[1]).astype(int)
    G_loc = G_rows[:, noise_ids].toarray() if noise_ids.size else np.zeros((C.size, 0))
    Q_loc = model.Q[np.ix_(noise_ids, noise_ids)]

    H_l = model.H_block(sensor_id)
    if np.any(H_l[:, ~inside] != 0):
        raise ModelError(f"El sensor {sensor_id} observa estados fuera de su conjunto de corte")
    return SubSystem(
        sensor_id=sensor_id,
        cutset=C,
        n_total=model.n,
        F_loc=F_loc,
        D_loc=D_loc,
        d_input_states=d_states,
        G_loc=G_loc,
        noise_ids=noise_ids,
        Q_loc=Q_loc,
        H_red=H_l[:, C],
        R_l=model.R_block(sensor_id),
    )


def decompose(model: GlobalModel, L: int, cover_windows: bool = True) -> List[SubSystem]:
    """Conjuntos de corte, ampliacion para la banda L y subsistemas, en orden de sensor.

    Con ``cover_windows`` cada ventana de L + 1 estados consecutivos queda
    dentro de algun conjunto, como exige el reparto de la banda.
    """

    digraph = build_digraph(model)
    sets = extend_cutsets(cut_point_sets(model, digraph), L, digraph)
    if cover_windows and L > 0:
        sets = cover_band_windows(sets, L, model.n)
    subsystems = [build_subsystem(model, cutset, sid) for sid, cutset in zip(model.sensor_ids, sets)]
    get_logger(fase="descomposicion").info(
        "Descomposicion L=%d: n_l=%s", L, [sub.n_l for sub in subsystems]
    )
    return subsystems


# -----------------------------------------------------------------------------
# Topologia de fusion
# -----------------------------------------------------------------------------

def metropolis_weights(comm_graph: nx.Graph, members: Sequence[int]) -> np.ndarray:
    """Pesos Metropolis-Hastings sobre el subgrafo inducido por ``members``.

    w_uv = 1 / (1 + max(deg_u, deg_v)) en cada arista y la diagonal absorbe el
    resto; la matriz es simetrica y doblemente estocastica.
    """

    members = list(members)
    sub = comm_graph.subgraph(members)
    position = {sensor: idx for idx, sensor in enumerate(members)}
    W = np.zeros((len(members), len(members)))
    for u, v in sub.edges():
        weight = 1.0 / (1.0 + max(sub.degree(u), sub.degree(v)))
        W[position[u], position[v]] = weight
        W[position[v], position[u]] = weight
    W[np.diag_indices(len(members))] = 1.0 - W.sum(axis=1)
    return W


def default_comm_graph(subsystems: Sequence[SubSystem]) -> nx.Graph:
    """Une sensores cuyos conjuntos se solapan o que intercambian entradas internas."""

    graph = nx.Graph()
    graph.add_nodes_from(sub.sensor_id for sub in subsystems)
    for position, first in enumerate(subsystems):
        first_set = set(first.cutset.tolist())
        first_inputs = set(first.d_input_states.tolist())
        for second in subsystems[position + 1 :]:
            second_set = set(second.cutset.tolist())
            second_inputs = set(second.d_input_states.tolist())
            if first_set & second_set or first_inputs & second_set or second_inputs & first_set:
                graph.add_edge(first.sensor_id, second.sensor_id)
    return graph


def build_fusion_topology(
    model: GlobalModel,
    subsystems: Sequence[SubSystem],
    comm_graph: nx.Graph | None = None,
) -> FusionTopology:
    """Grafo bipartito, subgrafos G_j y pesos de consenso.

    Raises:
        TopologyError: Si el grafo de comunicacion no es conexo, o si algun G_j o
            alguna interseccion G_a ∩ G_b de un par observado no lo es.
    """

    comm_graph = comm_graph if comm_graph is not None else default_comm_graph(subsystems)
    if comm_graph.number_of_nodes() and not nx.is_connected(comm_graph):
        raise TopologyError("El grafo de comunicacion no es conexo")

    bipartite = nx.Graph()
    bipartite.add_nodes_from(("s", sid) for sid in model.sensor_ids)
    bipartite.add_nodes_from(("x", j) for j in range(model.n))
    state_members: Dict[int, List[int]] = {}
    for sid in model.sensor_ids:
        for j in np.flatnonzero(np.any(model.H_block(sid) != 0, axis=0)):
            bipartite.add_edge(("s", sid), ("x", int(j)))
            state_members.setdefault(int(j), []).append(sid)

    holders: Dict[int, List[int]] = {}
    for sub in subsystems:
        for j in sub.cutset:
            holders.setdefault(int(j), []).append(sub.sensor_id)

    topology = FusionTopology(
        bipartite=bipartite,
        state_members={j: tuple(sorted(members)) for j, members in state_members.items()},
        holders={j: tuple(sorted(members)) for j, members in holders.items()},
        comm_graph=comm_graph,
    )
    for state, members in sorted(topology.state_members.items()):
        check_connected(comm_graph, members, state=state)
        topology.weight_matrix(members)
    for members, pair in sorted(pair_intersections(model, topology.state_members).items()):
        check_connected(comm_graph, members, state=pair[0], pair=pair)
        topology.weight_matrix(members)
    return topology


def pair_intersections(
    model: GlobalModel, state_members: Dict[int, Tuple[int, ...]]
) -> Dict[Tuple[int, ...], Tuple[int, int]]:
    """Subgrafos G_a ∩ G_b de los pares (a, b) que algun sensor observa a la vez.

    Devuelve cada interseccion distinta con el primer par que la produce.
    """

    found: Dict[Tuple[int, ...], Tuple[int, int]] = {}
    for sid in model.sensor_ids:
        support = np.flatnonzero(np.any(model.H_block(sid) != 0, axis=0))
        for p, a in enumerate(support):
            for b in support[p + 1 :]:
                members = tuple(sorted(set(state_members[int(a)]) & set(state_members[int(b)])))
                found.setdefault(members, (int(a), int(b)))
    return found


def check_connected(
    comm_graph: nx.Graph,
    members: Tuple[int, ...],
    state: int | None = None,
    pair: Tuple[int, int] | None = None,
) -> None:
    """Lanza TopologyError si el subgrafo inducido por ``members`` no es conexo."""

    if len(members) >= 2 and not nx.is_connected(comm_graph.subgraph(members)):
        where = f"par {pair}" if pair is not None else f"estado {state}"
        raise TopologyError(f"Subgrafo de fusion {members} no conexo ({where})", state=state, sensors=members)


# -----------------------------------------------------------------------------
# Exportacion
# -----------------------------------------------------------------------------

def decomposition_report(subsystems: Sequence[SubSystem], topology: FusionTopology) -> dict:
    return {
        "sensors": [
            {
                "sensor": sub.sensor_id,
                "cutset": sub.cutset.tolist(),
                "input_states": sub.d_input_states.tolist(),
                "noise_ids": sub.noise_ids.tolist(),
                "neighbors": topology.neighbors(sub.sensor_id),
            }
            for sub in subsystems
        ],
        "fusion_subgraphs": {str(j): list(members) for j, members in sorted(topology.state_members.items())},
    }


def export_decomposition(
    subsystems: Sequence[SubSystem], topology: FusionTopology, out_dir: str | Path
) -> Tuple[Path, Path]:
    """Escribe ``decomposition.json`` y ``fusion_edges.csv`` (sensor,state)."""

    out = Path(out_dir)
    report = write_json(out / "decomposition.json", decomposition_report(subsystems, topology))
    edges = write_csv(out / "fusion_edges.csv", ["sensor", "state"], topology.edge_rows())
    return report, edges
