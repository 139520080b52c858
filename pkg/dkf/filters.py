"""Filtros de informacion: centralizado (CIF), centralizado L-bandado (CLBIF) y locales (LIF).

Las estimaciones admiten varias columnas (una por ensayo Monte Carlo). La
recursion de covarianza no depende de los datos, asi que se calcula una sola
vez para todas las columnas.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy import linalg

from dkf.banded_algebra import (
    band_project,
    collapse_segment,
    information_width,
    lband_invert,
    lband_invert_segment,
    spd_inverse,
)
from dkf.consensus import FusedObservations, fuse_observation_matrices, fuse_observation_vectors
from dkf.decomposition import FusionTopology, SubSystem
from dkf.dici import (
    BandLayout,
    DiciResult,
    DiciSolver,
    JorConfig,
    PairGather,
    StateGather,
    VectorResult,
    band_window,
)
from dkf.errors import (
    BandError,
    CollapseError,
    FilterDivergenceError,
    LocalityError,
    NotPositiveDefiniteError,
    TopologyError,
)
from dkf.model_core import GlobalModel, bandwidth
from dkf.simulator import CommNetwork, payload_bound
from utils.logging_utils import get_logger

PREDICTION_PHASE = "prediccion"
PREDICTED = "predicted"
FILTERED = "filtered"
TRACE_LIMIT = 1e12


def _inverse(matrix: np.ndarray, what: str) -> np.ndarray:
    try:
        return spd_inverse(matrix)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} no es definida positiva") from exc


def _zeros(n: int, columns: int | None) -> np.ndarray:
    return np.zeros(n) if columns is None else np.zeros((n, columns))


def process_noise(model: GlobalModel) -> np.ndarray:
    """G Q G^T densa."""

    G = model.G.toarray()
    return G @ model.Q @ G.T


def observation_information(model: GlobalModel) -> np.ndarray:
    """I = H^T R^{-1} H = sum_l H_l^T R_l^{-1} H_l."""

    return model.H.T @ np.linalg.solve(model.R, model.H)


def observation_vector(model: GlobalModel, y: np.ndarray) -> np.ndarray:
    """i_k = H^T R^{-1} y_k; y puede tener una columna por ensayo."""

    return model.H.T @ np.linalg.solve(model.R, y)


def observation_width(model: GlobalModel) -> int:
    """Mayor desplazamiento |a - b| no nulo de las H_l^T R_l^{-1} H_l."""

    width = 0
    for sid in model.sensor_ids:
        H_l = model.H_block(sid)
        width = max(width, information_width(H_l.T @ np.linalg.solve(model.R_block(sid), H_l)))
    return width


def filter_band(model: GlobalModel, L: int) -> int:
    """Banda del paso de filtrado de los filtros locales: max(L, ancho de observacion).

    Los conjuntos de corte deben descomponerse con esta banda para que
    Z^(l) + I_f^(l) quede cubierta.
    """

    return min(max(L, observation_width(model)), model.n - 1)


# -----------------------------------------------------------------------------
# Filtro de informacion centralizado
# -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CentralState:
    """Estimacion de informacion z_hat = Z x_hat y matriz de informacion Z."""

    z_hat: np.ndarray
    Z: np.ndarray
    phase: str
    k: int
    L: int | None = None

    @property
    def S(self) -> np.ndarray:
        return _inverse(self.Z, "Z")

    @property
    def x_hat(self) -> np.ndarray:
        return linalg.cho_solve(linalg.cho_factor(self.Z, lower=True), self.z_hat)

    def trace(self) -> float:
        return float(np.trace(self.S))


def cif_init(model: GlobalModel, columns: int | None = None) -> CentralState:
    """Z_{0|-1} = S0^{-1}, z_hat_{0|-1} = 0."""

    return CentralState(_zeros(model.n, columns), _inverse(model.S0, "S0"), PREDICTED, 0)


def cif_filter(
    state: CentralState, model: GlobalModel, y: np.ndarray, information: np.ndarray | None = None
) -> CentralState:
    """Z_{k|k} = Z_{k|k-1} + I, z_hat_{k|k} = z_hat_{k|k-1} + H^T R^{-1} y_k."""

    information = observation_information(model) if information is None else information
    return replace(
        state,
        z_hat=state.z_hat + observation_vector(model, y),
        Z=state.Z + information,
        phase=FILTERED,
    )


def _predict_covariance(state: CentralState, model: GlobalModel) -> Tuple[np.ndarray, np.ndarray]:
    S = state.S
    F = model.F.toarray()
    S_pred = F @ S @ F.T + process_noise(model)
    x_pred = F @ (S @ state.z_hat)
    return 0.5 * (S_pred + S_pred.T), x_pred


def cif_predict(state: CentralState, model: GlobalModel) -> CentralState:
    """Z_{k+1|k} = (F Z^{-1} F^T + G Q G^T)^{-1}, z_hat = Z_{k+1|k} F Z^{-1} z_hat.

    Raises:
        NotPositiveDefiniteError: Si la covarianza predicha es singular.
    """

    S_pred, x_pred = _predict_covariance(state, model)
    Z_pred = _inverse(S_pred, "S_{k+1|k}")
    return CentralState(Z_pred @ x_pred, Z_pred, PREDICTED, state.k + 1, state.L)


def cif_step(state: CentralState, model: GlobalModel, y: np.ndarray) -> CentralState:
    """Paso de filtrado seguido de prediccion."""

    return cif_predict(cif_filter(state, model, y), model)


# -----------------------------------------------------------------------------
# CLBIF
# -----------------------------------------------------------------------------

def _band_limit(model: GlobalModel, L: int) -> int:
    return min(L, model.n - 1)


def clbif_init(model: GlobalModel, L: int, columns: int | None = None) -> CentralState:
    """Z_{0|-1} L-bandada reconstruida desde la banda de S0."""

    L = _band_limit(model, L)
    Z = lband_invert(band_project(model.S0, L)).to_dense()
    return CentralState(_zeros(model.n, columns), Z, PREDICTED, 0, L)


def clbif_filter(
    state: CentralState, model: GlobalModel, y: np.ndarray, L: int, information: np.ndarray | None = None
) -> CentralState:
    """Z_{k|k} = Z_{k|k-1} + I con I exacta; la banda L solo se impone al predecir."""

    L = _band_limit(model, L)
    information = observation_information(model) if information is None else information
    return replace(
        state,
        z_hat=state.z_hat + observation_vector(model, y),
        Z=state.Z + information,
        phase=FILTERED,
        L=L,
    )


def clbif_predict(state: CentralState, model: GlobalModel, L: int) -> CentralState:
    """Prediccion: banda de S_{k+1|k} y reconstruccion L-bandada de Z_{k+1|k}.

    Raises:
        SingularWindowError: Si una ventana de la banda no es SPD.
    """

    L = _band_limit(model, L)
    S_pred, x_pred = _predict_covariance(state, model)
    Z_pred = lband_invert(band_project(S_pred, L)).to_dense()
    return CentralState(Z_pred @ x_pred, Z_pred, PREDICTED, state.k + 1, L)


def clbif_step(state: CentralState, model: GlobalModel, y: np.ndarray, L: int) -> CentralState:
    return clbif_predict(clbif_filter(state, model, y, L), model, L)


# -----------------------------------------------------------------------------
# Oraculo en forma de covarianza
# -----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceState:
    x: np.ndarray
    P: np.ndarray
    phase: str
    k: int


def kalman_init(model: GlobalModel, columns: int | None = None) -> CovarianceState:
    return CovarianceState(_zeros(model.n, columns), np.array(model.S0, dtype=float), PREDICTED, 0)


def kalman_filter(state: CovarianceState, model: GlobalModel, y: np.ndarray) -> CovarianceState:
    """Actualizacion de Kalman con la forma de Joseph."""

    H, R, P = model.H, model.R, state.P
    innovation_cov = H @ P @ H.T + R
    gain = np.linalg.solve(innovation_cov, H @ P).T
    x = state.x + gain @ (y - H @ state.x)
    A = np.eye(model.n) - gain @ H
    P_f = A @ P @ A.T + gain @ R @ gain.T
    return CovarianceState(x, 0.5 * (P_f + P_f.T), FILTERED, state.k)


def kalman_predict(state: CovarianceState, model: GlobalModel) -> CovarianceState:
    F = model.F.toarray()
    P = F @ state.P @ F.T + process_noise(model)
    return CovarianceState(F @ state.x, 0.5 * (P + P.T), PREDICTED, state.k + 1)


def kalman_step(state: CovarianceState, model: GlobalModel, y: np.ndarray) -> Tuple[CovarianceState, CovarianceState]:
    """(filtrado, predicho) de un paso del filtro de Kalman clasico."""

    filtered = kalman_filter(state, model, y)
    return filtered, kalman_predict(filtered, model)


def riccati_steady_state(
    model: GlobalModel, tol: float = 1e-10, max_iter: int = 100000
) -> Tuple[np.ndarray, np.ndarray]:
    """Covarianzas estacionarias (predicha, filtrada) del filtro optimo.

    Usa ``solve_discrete_are`` y, si falla, itera la recursion de Riccati.
    """

    F = model.F.toarray()
    H, R = model.H, model.R
    GQG = process_noise(model)
    try:
        P = linalg.solve_discrete_are(F.T, H.T, GQG, R)
        if not np.all(np.isfinite(P)):
            raise ValueError("solucion no finita")
    except (linalg.LinAlgError, ValueError, np.linalg.LinAlgError):
        get_logger(fase="riccati").info("DARE sin solucion directa; se itera la recursion")
        state = kalman_init(model)
        for _ in range(max_iter):
            filtered, predicted = kalman_step(state, model, np.zeros(model.p))
            if np.max(np.abs(predicted.P - state.P)) < tol:
                break
            state = predicted
        P = predicted.P
    P = 0.5 * (P + P.T)
    P_f = P - P @ H.T @ np.linalg.solve(H @ P @ H.T + R, H @ P)
    return P, 0.5 * (P_f + P_f.T)


def riccati_steady_trace(model: GlobalModel) -> float:
    """Traza de la covarianza filtrada estacionaria del CIF."""

    return float(np.trace(riccati_steady_state(model)[1]))


def check_trace(step: int, trace: float) -> None:
    """Lanza FilterDivergenceError si la traza no es finita o supera TRACE_LIMIT."""

    if not np.isfinite(trace) or trace > TRACE_LIMIT:
        raise FilterDivergenceError(step, trace)


# -----------------------------------------------------------------------------
# Filtros locales
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class LifConfig:
    """Parametros de consenso y DICI de los filtros locales."""

    L: int
    consensus_tol: float = 1e-5
    consensus_max_iter: int = 500
    consensus_strict: bool = True
    jor: JorConfig = field(default_factory=JorConfig)
    initial: str = "local"


@dataclass(frozen=True, eq=False)
class InfoState:
    """Estado de un filtro local sobre su conjunto de corte."""

    sensor_id: int
    cutset: np.ndarray
    z_hat: np.ndarray
    Z: np.ndarray
    k: int
    phase: str
    S: np.ndarray | None = None
    x_hat: np.ndarray | None = None
    d_hat: np.ndarray | None = None

    @property
    def n_l(self) -> int:
        return int(self.cutset.size)


@dataclass
class LifStepReport:
    """Diagnostico de un ciclo completo de los filtros locales."""

    k: int
    trace_filtered: float
    trace_predicted: float
    consensus_iters: int
    dici_iters: int
    dici_vector_iters: int
    messages: int
    pivot_failures: int


def _halo_information(
    layout: BandLayout, band_segments: Mapping[int, Sequence[np.ndarray]], sid: int, L: int
) -> List[np.ndarray]:
    """Z L-bandada de cada tramo del halo a partir de la banda de S."""

    return [
        lband_invert_segment(seg, s0, layout.n, L)
        for (s0, _), seg in zip(layout.halo_segments[sid], band_segments[sid])
    ]


def _cutset_block(layout: BandLayout, sid: int, segments: Sequence[np.ndarray], L: int) -> np.ndarray:
    """Entradas |a - b| <= L entre estados del conjunto de corte, leidas de los tramos del halo."""

    C = layout.cutsets[sid]
    starts = np.array([s0 for s0, _ in layout.halo_segments[sid]])
    seg = np.searchsorted(starts, C, side="right") - 1
    local = C - starts[seg]
    block = np.zeros((C.size, C.size))
    for p in range(C.size):
        near = (seg == seg[p]) & (np.abs(C - C[p]) <= L)
        block[p, near] = segments[seg[p]][local[p], local[near]]
    return block


def lif_init(
    subsystems: Sequence[SubSystem],
    model: GlobalModel,
    L: int,
    layout: BandLayout | None = None,
    columns: int | None = None,
) -> Dict[int, InfoState]:
    """z_hat^(l)_{0|-1} = 0 y Z^(l)_{0|-1} por inversion L-bandada de ventanas de S0.

    Cada sensor solo usa S0 sobre su halo; no hay comunicacion. ``layout``
    puede tener una banda mayor que L (banda de filtrado).
    """

    L = min(L, model.n - 1)
    layout = layout or BandLayout(subsystems, L)
    band_segments = {
        sid: [model.S0[s0:s1, s0:s1] for s0, s1 in layout.halo_segments[sid]] for sid in layout.sensors
    }
    states = {}
    for sub in subsystems:
        sid = sub.sensor_id
        Z_loc = _cutset_block(layout, sid, _halo_information(layout, band_segments, sid, L), L)
        states[sid] = InfoState(sid, sub.cutset, _zeros(sub.n_l, columns), Z_loc, 0, PREDICTED)
    return states


class LocalFilterBank:
    """Conjunto de filtros locales que cooperan por mensajes.

    Args:
        model: Modelo global (solo se usan sus bloques locales y S0).
        subsystems: Subsistemas por sensor.
        topology: Subgrafos de fusion y pesos de consenso.
        cfg: Parametros de consenso y DICI.
        network: Red simulada para contar trafico; opcional.

    Raises:
        BandError: Si los conjuntos de corte no cubren la banda de filtrado
            max(L, ancho de I^(l)).
        LocalityError: Si la prediccion de algun sensor necesita una
            envolvente de estados mayor que n_l + 2 (ancho(F) + W).
    """

    def __init__(
        self,
        model: GlobalModel,
        subsystems: Sequence[SubSystem],
        topology: FusionTopology,
        cfg: LifConfig,
        network: CommNetwork | None = None,
    ) -> None:
        self.model = model
        self.subsystems = {sub.sensor_id: sub for sub in subsystems}
        self.topology = topology
        self.cfg = cfg
        self.network = network
        self.L = min(cfg.L, model.n - 1)
        self.I_local = {sid: sub.observation_information() for sid, sub in self.subsystems.items()}
        width = max(information_width(self.I_local[sub.sensor_id], sub.cutset) for sub in subsystems)
        self.W = max(self.L, min(width, model.n - 1))
        try:
            self.layout = BandLayout(subsystems, self.W)
        except TopologyError as exc:
            if self.W == self.L:
                raise
            raise BandError(
                f"I^(l) ocupa la banda {self.W} > L={self.L} y los conjuntos de corte no la cubren; "
                f"descomponer con filter_band(model, {self.L})"
            ) from exc
        if network is not None and network.payload_limit is None:
            network.payload_limit = payload_bound([sub.n_l for sub in subsystems], self.L)
        self.solver = DiciSolver(self.layout, cfg.jor, network=network, initial=cfg.initial)
        self._logger = get_logger(fase="lif")
        if self.W > self.L:
            self._logger.info("Banda de filtrado W=%d para L=%d", self.W, self.L)

        bw = bandwidth(model.F)
        self.inputs: Dict[int, np.ndarray] = {}
        self.F_rows: Dict[int, np.ndarray] = {}
        self.noise: Dict[int, np.ndarray] = {}
        hulls = {}
        for sid, sub in self.subsystems.items():
            A = np.union1d(sub.cutset, sub.d_input_states).astype(int)
            span = int(A[-1] - A[0] + 1)
            limit = sub.n_l + 2 * (bw + self.W)
            if span > limit:
                raise LocalityError(sid, span, limit)
            F_CA = np.zeros((sub.n_l, A.size))
            F_CA[:, np.searchsorted(A, sub.cutset)] = sub.F_loc
            if sub.d_input_states.size:
                F_CA[:, np.searchsorted(A, sub.d_input_states)] = sub.D_loc
            self.inputs[sid] = A
            self.F_rows[sid] = F_CA
            self.noise[sid] = sub.G_loc @ sub.Q_loc @ sub.G_loc.T
            hulls[sid] = ((int(A[0]), int(A[-1]) + 1),)
        self.hull_pairs = PairGather(self.layout, hulls)
        self.input_states = StateGather(self.layout, self.inputs)
        self.I_fused: Dict[int, np.ndarray] | None = None
        self.fusion_runs: list = []

    # ------------------------------------------------------------------
    # Fusion
    # ------------------------------------------------------------------

    def fuse_information(self) -> Dict[int, np.ndarray]:
        """Fusiona una sola vez las matrices I^(l) (modelo estacionario)."""

        if self.I_fused is None:
            self.I_fused, runs = fuse_observation_matrices(
                list(self.subsystems.values()),
                self.topology,
                self.I_local,
                self.cfg.consensus_tol,
                self.cfg.consensus_max_iter,
                L=self.W,
                network=self.network,
                strict=self.cfg.consensus_strict,
            )
            self.fusion_runs.extend(runs)
        return self.I_fused

    def fuse(self, y: np.ndarray) -> FusedObservations:
        """Fusiona i^(l) = H^(l)^T R_l^{-1} y^(l) del instante actual."""

        i_locals = {}
        for sid, sub in self.subsystems.items():
            start, stop = next((s, e) for s_id, s, e in self.model.sensor_rows if s_id == sid)
            i_locals[sid] = sub.observation_vector(y[start:stop])
        vectors, runs = fuse_observation_vectors(
            list(self.subsystems.values()),
            self.topology,
            i_locals,
            self.cfg.consensus_tol,
            self.cfg.consensus_max_iter,
            network=self.network,
            strict=self.cfg.consensus_strict,
        )
        return FusedObservations(vectors=vectors, matrices=self.fuse_information(), runs=runs)

    # ------------------------------------------------------------------
    # Filtrado y prediccion
    # ------------------------------------------------------------------

    def filter_step(
        self, states: Mapping[int, InfoState], fused: FusedObservations
    ) -> Tuple[Dict[int, InfoState], DiciResult, VectorResult]:
        """Z^(l) += I_f^(l), z_hat^(l) += i_f^(l); DICI para S^(l) y x_hat^(l)."""

        I_f = fused.matrices if fused.matrices is not None else self.fuse_information()
        Z_locals = {sid: states[sid].Z + I_f[sid] for sid in self.layout.sensors}
        z_locals = {sid: states[sid].z_hat + fused.vectors[sid] for sid in self.layout.sensors}
        self.solver.load(Z_locals)
        matrix = self.solver.invert()
        vector = self.solver.solve(z_locals)
        filtered = {
            sid: replace(
                states[sid],
                Z=Z_locals[sid],
                z_hat=z_locals[sid],
                phase=FILTERED,
                S=matrix.local_covariance(sid),
                x_hat=vector.cutset_values(sid),
            )
            for sid in self.layout.sensors
        }
        return filtered, matrix, vector

    def prediction_step(
        self, states: Mapping[int, InfoState], matrix: DiciResult, vector: VectorResult
    ) -> Tuple[Dict[int, InfoState], float]:
        """S^(l)_{k+1|k} por pares propios, Z^(l)_{k+1|k} por ventanas y z_hat por filas.

        Returns:
            (estados predichos, traza de S_{k+1|k} sumada sobre propietarios).

        Raises:
            CollapseError: Si strict y un pivote de la envolvente no es SPD.
        """

        layout, L, network = self.layout, self.L, self.network
        hull = self.hull_pairs.gather(matrix.owned, network, PREDICTION_PHASE)
        x_inputs = self.input_states.gather(vector.owned, network, PREDICTION_PHASE)

        s_pred_owned: Dict[int, np.ndarray] = {}
        v_owned: Dict[int, np.ndarray] = {}
        trace = 0.0
        for sid in layout.sensors:
            A = self.inputs[sid]
            S_hull = hull[sid][0]
            try:
                collapse_segment(S_hull, self.W, strict=self.cfg.jor.strict)
            except CollapseError as exc:
                raise CollapseError(int(A[0]) + exc.index) from None
            pos = A - A[0]
            S_AA = S_hull[np.ix_(pos, pos)]
            F_CA = self.F_rows[sid]
            block = F_CA @ S_AA @ F_CA.T + self.noise[sid]
            block = 0.5 * (block + block.T)
            s_pred_owned[sid] = layout.owned_from_local(sid, block)
            pairs = layout.owned_pairs[sid]
            trace += float(np.sum(s_pred_owned[sid][pairs[:, 0] == pairs[:, 1]]))
            Fx = F_CA @ x_inputs[sid]
            v_owned[sid] = layout.owned_states_from_local(sid, Fx)
            if network is not None:
                n_a = A.size
                network.add_flops(sid, PREDICTION_PHASE, 2 * F_CA.shape[0] * n_a * (n_a + F_CA.shape[0]))

        s_pred_halo = layout.halo_pairs.gather(s_pred_owned, network, PREDICTION_PHASE)
        v_halo = layout.halo_states.gather(v_owned, network, PREDICTION_PHASE)

        predicted: Dict[int, InfoState] = {}
        for sid in layout.sensors:
            Z_segments = _halo_information(layout, s_pred_halo, sid, L)
            Z_loc = _cutset_block(layout, sid, Z_segments, L)
            C = layout.cutsets[sid]
            starts = np.array([s0 for s0, _ in layout.halo_segments[sid]])
            offsets = layout.segment_offsets(sid)
            seg = np.searchsorted(starts, C, side="right") - 1
            z_pred = np.zeros((C.size,) + v_halo[sid].shape[1:])
            for k, (s0, s1) in enumerate(layout.halo_segments[sid]):
                mask = seg == k
                if not np.any(mask):
                    continue
                la = C[mask] - s0
                K, valid = band_window(la, L, s1 - s0)
                weights = np.where(valid, Z_segments[k][la[:, None], K], 0.0)
                v_seg = v_halo[sid][offsets[k] : offsets[k] + s1 - s0]
                z_pred[mask] = np.einsum("qk,qk...->q...", weights, v_seg[K])
            d_states = self.subsystems[sid].d_input_states
            d_hat = x_inputs[sid][np.searchsorted(self.inputs[sid], d_states)] if d_states.size else None
            predicted[sid] = replace(
                states[sid],
                Z=Z_loc,
                z_hat=z_pred,
                phase=PREDICTED,
                k=states[sid].k + 1,
                d_hat=d_hat,
            )
        return predicted, trace

    def step(
        self, states: Mapping[int, InfoState], y: np.ndarray
    ) -> Tuple[Dict[int, InfoState], Dict[int, InfoState], LifStepReport]:
        """Ciclo completo: fusion, filtrado, DICI (matriz y vector) y prediccion."""

        before = self.network.traffic_report().total_messages() if self.network is not None else 0
        fused = self.fuse(y)
        filtered, matrix, vector = self.filter_step(states, fused)
        predicted, trace_pred = self.prediction_step(filtered, matrix, vector)
        k = next(iter(states.values())).k
        trace_filt = matrix.trace()
        check_trace(k, trace_filt)
        if self.network is not None:
            messages = self.network.traffic_report().total_messages() - before
        else:
            messages = fused.messages
        report = LifStepReport(
            k=k,
            trace_filtered=trace_filt,
            trace_predicted=trace_pred,
            consensus_iters=fused.max_iterations,
            dici_iters=matrix.iterations,
            dici_vector_iters=vector.iterations,
            messages=messages,
            pivot_failures=matrix.pivot_failures,
        )
        self._logger.debug(
            "Paso %d: traza %.4f, consenso %d, DICI %d", k, trace_filt, report.consensus_iters, report.dici_iters
        )
        return filtered, predicted, report

    def initial_states(self, columns: int | None = None) -> Dict[int, InfoState]:
        return lif_init(list(self.subsystems.values()), self.model, self.L, layout=self.layout, columns=columns)

    def assemble(self, states: Mapping[int, InfoState]) -> Tuple[np.ndarray, np.ndarray]:
        """Vista global (z_hat, Z en banda) rellenada con ceros; solo para comparar con el CLBIF."""

        sample = next(iter(states.values())).z_hat
        z_hat = np.zeros((self.layout.n,) + sample.shape[1:])
        Z = np.zeros((self.layout.n, self.layout.n))
        for sid in self.layout.sensors:
            C = states[sid].cutset
            z_hat[C] = states[sid].z_hat
            Z[np.ix_(C, C)] = states[sid].Z
        return z_hat, Z

    def assemble_estimates(self, states: Mapping[int, InfoState]) -> np.ndarray:
        sample = next(iter(states.values())).x_hat
        x_hat = np.zeros((self.layout.n,) + sample.shape[1:])
        for sid in self.layout.sensors:
            x_hat[states[sid].cutset] = states[sid].x_hat
        return x_hat


def lif_fuse(bank: LocalFilterBank, y: np.ndarray) -> FusedObservations:
    return bank.fuse(y)


def lif_filter_step(
    bank: LocalFilterBank, states: Mapping[int, InfoState], fused: FusedObservations
) -> Tuple[Dict[int, InfoState], DiciResult, VectorResult]:
    return bank.filter_step(states, fused)


def lif_prediction_step(
    bank: LocalFilterBank, states: Mapping[int, InfoState], matrix: DiciResult, vector: VectorResult
) -> Dict[int, InfoState]:
    return bank.prediction_step(states, matrix, vector)[0]


def check_estimate_consensus(
    states: Mapping[int, InfoState], holders: Mapping[int, Sequence[int]], attribute: str = "z_hat"
) -> Dict[int, float]:
    """Maxima diferencia entre sensores de la estimacion de cada estado compartido.

    Args:
        states: Estados locales por sensor.
        holders: Sensores que contienen cada estado (FusionTopology.holders).
        attribute: "z_hat" o "x_hat".
    """

    deviation: Dict[int, float] = {}
    for state, sensors in sorted(holders.items()):
        if len(sensors) < 2:
            continue
        values = []
        for sid in sensors:
            local = getattr(states[sid], attribute)
            values.append(local[int(np.searchsorted(states[sid].cutset, state))])
        stack = np.stack(values)
        deviation[state] = float(np.max(stack.max(axis=0) - stack.min(axis=0)))
    return deviation
