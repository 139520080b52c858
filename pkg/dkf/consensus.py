"""Consenso por promedios ponderados sobre los subgrafos de fusion G_j.

Cada sensor de G_j parte de su contribucion local, itera x <- W x con pesos
doblemente estocasticos (Metropolis) y multiplica el promedio por |G_j| para
obtener la suma de las contribuciones. Los estados con el mismo conjunto de
sensores se fusionan juntos en una sola ejecucion.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from dkf.decomposition import FusionTopology, SubSystem
from dkf.errors import ConsensusError
from dkf.simulator import CommNetwork
from utils.export import write_csv
from utils.logging_utils import get_logger

FUSION_PHASE = "fusion"


@dataclass
class ConsensusRun:
    """Diagnostico de una ejecucion de consenso sobre un subgrafo."""

    members: Tuple[int, ...]
    initial: np.ndarray
    weights: np.ndarray
    iterations: int
    residual: float
    deviation: float
    rho: float
    messages: int
    converged: bool
    label: str = ""

    @property
    def subgraph_id(self) -> str:
        return "-".join(str(sensor) for sensor in self.members)


@dataclass
class FusedObservations:
    """Variables de observacion fusionadas por sensor, en coordenadas locales."""

    vectors: Dict[int, np.ndarray]
    matrices: Dict[int, np.ndarray] | None
    runs: List[ConsensusRun] = field(default_factory=list)

    @property
    def max_iterations(self) -> int:
        return max((run.iterations for run in self.runs), default=0)

    @property
    def messages(self) -> int:
        return sum(run.messages for run in self.runs)


def second_eigenvalue(weights: np.ndarray) -> float:
    """Segundo mayor modulo de autovalor de W (factor de convergencia)."""

    if weights.shape[0] < 2:
        return 0.0
    magnitudes = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (weights + weights.T))))[::-1]
    return float(magnitudes[1])


def _subgraph_neighbors(network: CommNetwork, members: Sequence[int]) -> Dict[int, List[int]]:
    inside = set(members)
    return {u: sorted(v for v in network.graph.neighbors(u) if v in inside) for u in members}


def consensus_sum(
    values: np.ndarray,
    members: Sequence[int],
    weights: np.ndarray,
    tol: float,
    max_iter: int,
    network: CommNetwork | None = None,
    strict: bool = True,
    label: str = "",
) -> Tuple[np.ndarray, ConsensusRun]:
    """Suma distribuida de las contribuciones de ``members``.

    Args:
        values: Array (m, ...) con la contribucion inicial de cada miembro.
        members: Ids de sensor en el orden de las filas de ``values``.
        weights: Matriz m x m doblemente estocastica del subgrafo.
        tol: Se detiene cuando el maximo cambio de una iteracion es < tol.
        max_iter: Limite de iteraciones.
        network: Si se da, cada iteracion es una ronda de mensajes entre vecinos.
        strict: Lanza ConsensusError al agotar max_iter; si es False devuelve
            el estado alcanzado (con tol=0 ejecuta exactamente max_iter).
        label: Etiqueta para el registro de diagnostico.

    Returns:
        (valores fusionados por miembro = |G_j| * promedio alcanzado, ConsensusRun).

    Raises:
        ConsensusError: Si strict y no se alcanza tol en max_iter iteraciones.
    """

    x = np.array(values, dtype=float, copy=True)
    initial = x.copy()
    m = x.shape[0]
    members = tuple(members)
    neighbors = _subgraph_neighbors(network, members) if network is not None else None
    position = {sensor: idx for idx, sensor in enumerate(members)}
    if neighbors is not None:
        directed_edges = sum(len(v) for v in neighbors.values())
    else:
        directed_edges = int(np.count_nonzero(weights[~np.eye(m, dtype=bool)]))

    def apply(current: np.ndarray) -> np.ndarray:
        if network is None:
            return np.tensordot(weights, current, axes=1)
        outgoing = {u: [(v, current[position[u]]) for v in neighbors[u]] for u in members}
        inboxes = network.exchange(FUSION_PHASE, outgoing)
        updated = np.empty_like(current)
        for u in members:
            pu = position[u]
            acc = weights[pu, pu] * current[pu]
            for message in inboxes[u]:
                acc = acc + weights[pu, position[message.src]] * message.payload
            updated[pu] = acc
        return updated

    iterations, rounds, residual, converged = 0, 0, 0.0, True
    if m > 1:
        while True:
            candidate = apply(x)
            rounds += 1
            residual = float(np.max(np.abs(candidate - x))) if x.size else 0.0
            if residual < tol:
                break
            x = candidate
            iterations += 1
            if iterations >= max_iter:
                converged = False
                break

    run = ConsensusRun(
        members=members,
        initial=initial,
        weights=weights,
        iterations=iterations,
        residual=residual,
        deviation=float(np.max(np.abs(x - initial.mean(axis=0)))) if x.size else 0.0,
        rho=second_eigenvalue(weights),
        messages=rounds * directed_edges,
        converged=converged,
        label=label,
    )
    if not converged and strict:
        raise ConsensusError(residual, iterations)
    return m * x, run


# -----------------------------------------------------------------------------
# Fusion de variables de observacion
# -----------------------------------------------------------------------------

def _local_positions(subsystems: Sequence[SubSystem]) -> Dict[int, Dict[int, int]]:
    return {sub.sensor_id: {int(j): p for p, j in enumerate(sub.cutset)} for sub in subsystems}


def _forward(
    network: CommNetwork | None,
    deliveries: Mapping[Tuple[int, int], List[Tuple[Tuple[int, ...], np.ndarray]]],
) -> None:
    """Un mensaje por par (miembro emisor, poseedor no miembro) con todas sus entradas."""

    if network is None or not deliveries:
        return
    outgoing: Dict[int, List[Tuple[int, np.ndarray]]] = defaultdict(list)
    for (src, dst), items in sorted(deliveries.items()):
        outgoing[src].append((dst, np.stack([value for _, value in items])))
    network.exchange(FUSION_PHASE, outgoing)


def fuse_observation_vectors(
    subsystems: Sequence[SubSystem],
    topology: FusionTopology,
    i_locals: Mapping[int, np.ndarray],
    tol: float,
    max_iter: int,
    network: CommNetwork | None = None,
    strict: bool = True,
) -> Tuple[Dict[int, np.ndarray], List[ConsensusRun]]:
    """Fusiona i^(l) estado a estado sobre G_j.

    Los poseedores de x_j que no lo observan reciben el valor fusionado del
    miembro de menor id. Los estados sin observadores quedan a cero.
    """

    positions = _local_positions(subsystems)
    fused = {sid: np.zeros_like(np.asarray(i_locals[sid], dtype=float)) for sid in positions}
    groups: Dict[Tuple[int, ...], List[int]] = defaultdict(list)
    for state, members in sorted(topology.state_members.items()):
        groups[members].append(state)

    runs: List[ConsensusRun] = []
    deliveries: Dict[Tuple[int, int], list] = defaultdict(list)
    for members, states in groups.items():
        values = np.stack(
            [np.asarray(i_locals[sid])[[positions[sid][j] for j in states]] for sid in members]
        )
        result, run = consensus_sum(
            values,
            members,
            topology.weight_matrix(members),
            tol,
            max_iter,
            network=network,
            strict=strict,
            label=f"i:{states[0]}..{states[-1]}",
        )
        runs.append(run)
        for row, sid in enumerate(members):
            fused[sid][[positions[sid][j] for j in states]] = result[row]
        owner_row = result[0]
        for offset, state in enumerate(states):
            for holder in topology.holders.get(state, ()):
                if holder in members:
                    continue
                fused[holder][positions[holder][state]] = owner_row[offset]
                deliveries[(members[0], holder)].append(((state,), owner_row[offset]))
    _forward(network, deliveries)
    return fused, runs


def fuse_observation_matrices(
    subsystems: Sequence[SubSystem],
    topology: FusionTopology,
    I_locals: Mapping[int, np.ndarray],
    tol: float,
    max_iter: int,
    L: int | None = None,
    network: CommNetwork | None = None,
    strict: bool = True,
) -> Tuple[Dict[int, np.ndarray], List[ConsensusRun]]:
    """Fusiona I^(l) entrada a entrada: el par (a, b) sobre G_a ∩ G_b.

    Con ``L`` solo se fusionan pares con |a - b| <= L; el resto de entradas
    locales queda a cero.
    """

    positions = _local_positions(subsystems)
    fused = {sub.sensor_id: np.zeros((sub.n_l, sub.n_l)) for sub in subsystems}
    pair_holders: Dict[Tuple[int, int], List[int]] = defaultdict(list)
    for sub in subsystems:
        cut = sub.cutset
        for p, a in enumerate(cut):
            for b in cut[p:]:
                if L is not None and b - a > L:
                    break
                pair_holders[(int(a), int(b))].append(sub.sensor_id)

    groups: Dict[Tuple[int, ...], List[Tuple[int, int]]] = defaultdict(list)
    for pair in sorted(pair_holders):
        a, b = pair
        members = tuple(
            sorted(set(topology.members(a)) & set(topology.members(b)))
        )
        if members:
            groups[members].append(pair)

    runs: List[ConsensusRun] = []
    deliveries: Dict[Tuple[int, int], list] = defaultdict(list)
    for members, pairs in groups.items():
        values = np.stack(
            [
                np.array([I_locals[sid][positions[sid][a], positions[sid][b]] for a, b in pairs])
                for sid in members
            ]
        )
        result, run = consensus_sum(
            values,
            members,
            topology.weight_matrix(members),
            tol,
            max_iter,
            network=network,
            strict=strict,
            label=f"I:{len(pairs)} pares",
        )
        runs.append(run)
        owner_row = result[0]
        for offset, (a, b) in enumerate(pairs):
            for holder in pair_holders[(a, b)]:
                row = members.index(holder) if holder in members else None
                value = result[row, offset] if row is not None else owner_row[offset]
                pa, pb = positions[holder][a], positions[holder][b]
                fused[holder][pa, pb] = value
                fused[holder][pb, pa] = value
                if row is None:
                    deliveries[(members[0], holder)].append(((a, b), value))
    _forward(network, deliveries)
    return fused, runs


def fuse_observation_variables(
    subsystems: Sequence[SubSystem],
    topology: FusionTopology,
    i_locals: Mapping[int, np.ndarray],
    I_locals: Mapping[int, np.ndarray] | None,
    tol: float,
    max_iter: int,
    L: int | None = None,
    network: CommNetwork | None = None,
    strict: bool = True,
) -> FusedObservations:
    """Fusion de i^(l) y, si se pasan, de las matrices I^(l).

    Para modelos estacionarios las matrices se fusionan una sola vez al
    arrancar; en los pasos siguientes se llama con ``I_locals=None``.

    Raises:
        ConsensusError: Propagado de consensus_sum.
    """

    logger = get_logger(fase=FUSION_PHASE)
    vectors, runs = fuse_observation_vectors(
        subsystems, topology, i_locals, tol, max_iter, network=network, strict=strict
    )
    matrices = None
    if I_locals is not None:
        matrices, matrix_runs = fuse_observation_matrices(
            subsystems, topology, I_locals, tol, max_iter, L=L, network=network, strict=strict
        )
        runs = runs + matrix_runs
    result = FusedObservations(vectors=vectors, matrices=matrices, runs=runs)
    logger.debug(
        "Fusion: %d subgrafos, max %d iteraciones, %d mensajes",
        len(runs),
        result.max_iterations,
        result.messages,
    )
    return result


def export_consensus_log(runs: Sequence[ConsensusRun], path: str | Path, metadata: Mapping | None = None) -> Path:
    """CSV de diagnostico: subgrafo, iteraciones, residuo, desviacion, rho y mensajes."""

    rows = [
        (run.subgraph_id, run.label, run.iterations, run.residual, run.deviation, run.rho, run.messages)
        for run in runs
    ]
    header = ["subgraph", "label", "iterations", "residual", "deviation", "rho", "messages"]
    return write_csv(path, header, rows, metadata)
