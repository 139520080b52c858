"""Red de sensores simulada por rondas sincronicas.

Cada ronda ejecuta el calculo de todos los sensores sobre su bandeja de
entrada, recoge las salidas y las entrega siguiendo rutas minimas del grafo
de comunicacion. Las entregas de la ronda r solo son legibles en la ronda
r + 1 (intercambio de bandejas en la barrera). Los reenvios multi-salto se
cuentan por salto.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import networkx as nx
import numpy as np

from dkf.errors import PayloadLimitError, RoutingError
from utils.export import write_csv
from utils.logging_utils import get_logger


@dataclass(frozen=True)
class Message:
    """Mensaje extremo a extremo ya entregado."""

    src: int
    dst: int
    phase: str
    payload: Any
    hops: int


@dataclass
class TrafficReport:
    """Totales de trafico por fase y por sensor."""

    messages: Dict[str, int]
    hops: Dict[str, int]
    scalars: Dict[str, int]
    flops: Dict[str, int]
    per_sensor: Dict[int, Dict[str, int]]
    rounds: int
    max_payload: int

    def total_messages(self) -> int:
        return sum(self.messages.values())

    def sensor_max(self, key: str) -> int:
        """Maximo por sensor de un contador (p. ej. 'flops' o 'sent_scalars')."""

        return max((counts.get(key, 0) for counts in self.per_sensor.values()), default=0)


@dataclass
class RoundBarrier:
    """Contador de rondas y bandejas pendientes de entregar."""

    round: int = 0
    pending: Dict[int, List[Message]] = field(default_factory=lambda: defaultdict(list))


def payload_dimension(payload: Any) -> int:
    """Dimension principal de una carga: eje 0 de un array, o el mayor de una tupla."""

    if isinstance(payload, np.ndarray):
        return int(payload.shape[0]) if payload.ndim else 1
    if isinstance(payload, (tuple, list)):
        return max((payload_dimension(item) for item in payload), default=0)
    return 1


def payload_scalars(payload: Any) -> int:
    if isinstance(payload, np.ndarray):
        return int(payload.size)
    if isinstance(payload, (tuple, list)):
        return sum(payload_scalars(item) for item in payload)
    return 1


def payload_bound(n_locals: Sequence[int], L: int) -> int:
    """Limite de localidad max_l max(n_l^2, n_l L) para la dimension de un mensaje."""

    return max((max(n_l * n_l, n_l * L) for n_l in n_locals), default=0)


class CommNetwork:
    """Tejido de mensajes determinista sobre el grafo de comunicacion G.

    Args:
        graph: Grafo no dirigido de sensores.
        payload_limit: Dimension maxima admitida por mensaje (None sin limite).
        keep_log: Guarda cada mensaje para exportarlo a CSV.
    """

    def __init__(
        self, graph: nx.Graph, payload_limit: int | None = None, keep_log: bool = False
    ) -> None:
        self.graph = graph
        self.sensors: Tuple[int, ...] = tuple(sorted(graph.nodes()))
        self.payload_limit = payload_limit
        self.keep_log = keep_log
        self.barrier = RoundBarrier()
        self._inboxes: Dict[int, List[Message]] = defaultdict(list)
        self._next_hop = self._routing_table()
        self.log: List[Tuple[int, str, int, int, int, int]] = []
        self._messages: Dict[str, int] = defaultdict(int)
        self._hops: Dict[str, int] = defaultdict(int)
        self._scalars: Dict[str, int] = defaultdict(int)
        self._flops: Dict[str, int] = defaultdict(int)
        self._per_sensor: Dict[int, Dict[str, int]] = {s: defaultdict(int) for s in self.sensors}
        self._max_payload = 0
        self._logger = get_logger(fase="red")

    def _routing_table(self) -> Dict[Tuple[int, int], int]:
        """Siguiente salto por camino minimo; empates al vecino de menor id."""

        table: Dict[Tuple[int, int], int] = {}
        for dst in self.sensors:
            dist = nx.single_source_shortest_path_length(self.graph, dst)
            for src in self.sensors:
                if src == dst or src not in dist:
                    continue
                candidates = [v for v in self.graph.neighbors(src) if dist.get(v) == dist[src] - 1]
                table[(src, dst)] = min(candidates)
        return table

    def route(self, src: int, dst: int) -> List[int]:
        """Camino completo de src a dst.

        Raises:
            RoutingError: Si no existe ruta o algun extremo no pertenece a la red.
        """

        if src not in self._per_sensor or dst not in self._per_sensor:
            raise RoutingError(src, dst)
        path = [src]
        while path[-1] != dst:
            step = self._next_hop.get((path[-1], dst))
            if step is None:
                raise RoutingError(src, dst)
            path.append(step)
        return path

    @property
    def round(self) -> int:
        return self.barrier.round

    # ------------------------------------------------------------------
    # Rondas
    # ------------------------------------------------------------------

    def send(self, src: int, dst: int, phase: str, payload: Any) -> None:
        """Encola un mensaje para la barrera de la ronda en curso."""

        path = self.route(src, dst)
        hops = len(path) - 1
        size = payload_dimension(payload)
        if self.payload_limit is not None and size > self.payload_limit:
            raise PayloadLimitError(src, dst, size, self.payload_limit)
        scalars = payload_scalars(payload)
        self._max_payload = max(self._max_payload, size)
        self._messages[phase] += 1
        self._hops[phase] += hops
        self._scalars[phase] += scalars * hops
        self._per_sensor[src]["sent_messages"] += 1
        self._per_sensor[src]["sent_scalars"] += scalars
        for relay in path[1:-1]:
            self._per_sensor[relay]["relayed_scalars"] += scalars
        self._per_sensor[dst]["received_scalars"] += scalars
        if self.keep_log:
            self.log.append((self.barrier.round, phase, src, dst, hops, scalars))
        self.barrier.pending[dst].append(Message(src, dst, phase, payload, hops))

    def run_round(
        self,
        compute: Callable[[int, List[Message]], Iterable[Tuple[int, Any]]],
        phase: str,
    ) -> "CommNetwork":
        """Ejecuta una ronda: cada sensor calcula sobre su bandeja y envia.

        ``compute(sensor, inbox)`` devuelve pares ``(destino, carga)``. Tras
        procesar todos los sensores se cruza la barrera: lo enviado pasa a ser
        la bandeja legible de la ronda siguiente.
        """

        for sensor in self.sensors:
            inbox = self._inboxes.pop(sensor, [])
            for dst, payload in compute(sensor, inbox) or ():
                self.send(sensor, dst, phase, payload)
        self._cross_barrier()
        return self

    def _cross_barrier(self) -> None:
        self._inboxes = self.barrier.pending
        self.barrier.pending = defaultdict(list)
        self.barrier.round += 1
        if self._logger.isEnabledFor(logging.DEBUG):
            self._logger.debug("Ronda %d completada", self.barrier.round)

    def exchange(
        self, phase: str, outgoing: Mapping[int, Sequence[Tuple[int, Any]]]
    ) -> Dict[int, List[Message]]:
        """Una ronda de solo envio; devuelve las bandejas entregadas por destino."""

        self.run_round(lambda sensor, _inbox: outgoing.get(sensor, ()), phase)
        delivered = {sensor: self._inboxes.pop(sensor, []) for sensor in self.sensors}
        return delivered

    def add_flops(self, sensor: int, phase: str, count: int) -> None:
        self._flops[phase] += int(count)
        self._per_sensor[sensor]["flops"] += int(count)
        self._per_sensor[sensor][f"flops_{phase}"] += int(count)

    def reset_counters(self) -> None:
        self._messages.clear()
        self._hops.clear()
        self._scalars.clear()
        self._flops.clear()
        self._per_sensor = {s: defaultdict(int) for s in self.sensors}
        self._max_payload = 0
        self.log.clear()

    # ------------------------------------------------------------------
    # Informes
    # ------------------------------------------------------------------

    def traffic_report(self) -> TrafficReport:
        return TrafficReport(
            messages=dict(self._messages),
            hops=dict(self._hops),
            scalars=dict(self._scalars),
            flops=dict(self._flops),
            per_sensor={s: dict(counts) for s, counts in self._per_sensor.items()},
            rounds=self.barrier.round,
            max_payload=self._max_payload,
        )

    def export_log(self, path: str | Path) -> Path:
        """CSV ``round,phase,src,dst,hops,scalars`` (requiere keep_log)."""

        return write_csv(path, ["round", "phase", "src", "dst", "hops", "scalars"], self.log)
