"""Inversion iterativa: JOR centralizado y DICI-OR (iterar + colapsar) distribuido.

JOR: S_{t+1} = P S_t + gamma M^{-1}, P = I - gamma M^{-1} Z, M = diag(Z).

DICI-OR solo itera las entradas |i - j| <= L de S. La fila a de P tiene
ancho de banda L, asi que cada entrada s_ab (a <= b) nueva necesita s_kb
con |k - b| <= 2L; las que caen fuera de banda se obtienen por colapso a
partir de la banda vigente, nunca se iteran. La entrada s_ab se calcula con
la fila a y se copia en s_ba.

Cada par de la banda tiene un unico sensor propietario (el de menor id cuyo
conjunto de corte contiene ambos indices) y cada estado tambien. Solo el
propietario calcula un valor y el resto lo recibe por mensaje, de modo que
todas las copias coinciden bit a bit tras cada ronda.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple

import numpy as np
from scipy import linalg

from dkf.banded_algebra import (
    BandProfile,
    band_project,
    collapse_segment,
    random_banded_spd,
    random_spd,
    spd_inverse,
)
from dkf.decomposition import SubSystem
from dkf.errors import (
    BandError,
    CollapseError,
    ConfigError,
    DiciConvergenceError,
    DkfError,
    JorDivergenceError,
    NotPositiveDefiniteError,
    TopologyError,
)
from dkf.simulator import CommNetwork
from utils.logging_utils import get_logger
from utils.rng import trial_rng

DICI_PHASE = "dici"
VECTOR_PHASE = "dici_vec"
INITIAL_MODES = ("local", "jacobi")

Segment = Tuple[int, int]


@dataclass(frozen=True)
class JorConfig:
    """Parametros de la iteracion JOR / DICI-OR.

    ``budget`` fija el numero de iterados contando S_0 como el primero:
    budget=1 no ejecuta ninguna ronda (operacion desacoplada) y desactiva
    el criterio de parada por tolerancia. ``patience`` exige que el cambio
    maximo quede bajo ``tol`` durante ese numero de rondas seguidas.
    """

    gamma: float = 0.1
    max_iter: int = 200
    tol: float = 1e-5
    patience: int = 1
    strict: bool = True
    budget: int | None = None

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ConfigError(f"gamma debe ser > 0 (gamma={self.gamma})")
        if self.tol <= 0:
            raise ConfigError(f"tol debe ser > 0 (tol={self.tol})")
        if self.max_iter < 0 or self.patience < 1:
            raise ConfigError("max_iter >= 0 y patience >= 1")
        if self.budget is not None and self.budget < 1:
            raise ConfigError(f"El presupuesto de iteraciones debe ser >= 1 (budget={self.budget})")

    def with_budget(self, budget: int | None) -> "JorConfig":
        return JorConfig(self.gamma, self.max_iter, self.tol, self.patience, self.strict, budget)


class _Stopper:
    """Criterio comun de parada: presupuesto fijo o tolerancia con paciencia."""

    def __init__(self, cfg: JorConfig) -> None:
        self.cfg = cfg
        self.rounds = 0
        self.streak = 0
        self.residual = float("inf")
        self.converged = False

    def wants_round(self) -> bool:
        if self.cfg.budget is not None:
            return self.rounds < self.cfg.budget - 1
        return not self.converged and self.rounds < self.cfg.max_iter

    def record(self, residual: float) -> None:
        self.rounds += 1
        self.residual = residual
        if self.cfg.budget is not None:
            return
        self.streak = self.streak + 1 if residual < self.cfg.tol else 0
        self.converged = self.streak >= self.cfg.patience

    def finish(self) -> bool:
        """True si la ejecucion se considera convergida; lanza si strict y no lo esta."""

        if self.cfg.budget is not None:
            return True
        if not self.converged and self.cfg.strict:
            raise DiciConvergenceError(self.residual, self.rounds)
        return self.converged


# -----------------------------------------------------------------------------
# JOR centralizado
# -----------------------------------------------------------------------------

def normalized_spectrum(Z: np.ndarray) -> np.ndarray:
    """Autovalores de M^{-1/2} Z M^{-1/2} (los de M^{-1} Z)."""

    d = np.diag(Z)
    if np.any(d <= 0):
        raise NotPositiveDefiniteError("La diagonal de Z debe ser positiva")
    scale = 1.0 / np.sqrt(d)
    return np.linalg.eigvalsh(scale[:, None] * Z * scale[None, :])


def spectral_radius(Z: np.ndarray, gamma: float) -> float:
    """Radio espectral de P_gamma = I - gamma M^{-1} Z."""

    mu = normalized_spectrum(Z)
    return float(np.max(np.abs(1.0 - gamma * mu)))


def optimal_gamma(Z: np.ndarray) -> float:
    """gamma que minimiza el radio espectral: 2 / (mu_min + mu_max)."""

    mu = normalized_spectrum(Z)
    return float(2.0 / (mu[0] + mu[-1]))


def check_jor(Z: np.ndarray, gamma: float) -> float:
    """Devuelve el radio espectral o lanza JorDivergenceError si es >= 1."""

    mu = normalized_spectrum(Z)
    rho = float(np.max(np.abs(1.0 - gamma * mu)))
    if rho >= 1.0:
        raise JorDivergenceError(rho, 2.0 / float(mu[-1]))
    return rho


@dataclass
class JorResult:
    """Iterado final de JOR y, con referencia, el error por iterado.

    ``errors`` guarda ||S_t - S||_2 y ``scaled_errors`` la norma escalada por
    Jacobi ||M^{1/2} (S_t - S) M^{1/2}||_2, que decrece al menos como rho^t
    para cualquier Z SPD. Si diag(Z) = 1 ambas coinciden.
    """

    S: np.ndarray
    iterations: int
    residual: float
    converged: bool
    spectral_radius: float
    errors: List[float] = field(default_factory=list)
    scaled_errors: List[float] = field(default_factory=list)


def jor_inverse(Z: np.ndarray, cfg: JorConfig, reference: np.ndarray | None = None) -> JorResult:
    """Aproxima Z^{-1} con JOR desde S_0 = M^{-1}.

    Se detiene cuando ||S_{t+1} - S_t||_F < tol (con paciencia) o al agotar el
    presupuesto. Con ``reference`` registra el error de cada iterado t = 0, 1, ...
    en norma espectral y en norma escalada por Jacobi.

    Raises:
        JorDivergenceError: Si el radio espectral de P_gamma es >= 1.
        DiciConvergenceError: Si strict y se agota max_iter.
    """

    Z = np.asarray(Z, dtype=float)
    rho = check_jor(Z, cfg.gamma)
    m_inv = 1.0 / np.diag(Z)
    P = np.eye(Z.shape[0]) - cfg.gamma * m_inv[:, None] * Z
    offset = np.diag(cfg.gamma * m_inv)
    S = np.diag(m_inv)
    root = np.sqrt(np.diag(Z))
    errors: List[float] = []
    scaled: List[float] = []

    def record_error() -> None:
        if reference is not None:
            E = S - reference
            errors.append(float(np.linalg.norm(E, 2)))
            scaled.append(float(np.linalg.norm(root[:, None] * E * root[None, :], 2)))

    record_error()
    stopper = _Stopper(cfg)
    while stopper.wants_round():
        S_next = P @ S + offset
        stopper.record(float(np.linalg.norm(S_next - S, "fro")))
        S = S_next
        record_error()
    converged = stopper.finish()
    return JorResult(S, stopper.rounds, stopper.residual, converged, rho, errors, scaled)


# -----------------------------------------------------------------------------
# Nucleos de iteracion sobre segmentos densos
# -----------------------------------------------------------------------------

def band_window(la: np.ndarray, L: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    K = la[:, None] + np.arange(-L, L + 1)
    valid = (K >= 0) & (K < m)
    return np.clip(K, 0, m - 1), valid


def _jor_pairs(
    Z_seg: np.ndarray, S_seg: np.ndarray, la: np.ndarray, lb: np.ndarray, gamma: float, L: int
) -> np.ndarray:
    """s_ab nuevo = s_ab - gamma/z_aa (sum_k z_ak s_kb) + gamma/z_aa delta_ab."""

    K, valid = band_window(la, L, S_seg.shape[0])
    terms = np.where(valid, Z_seg[la[:, None], K] * S_seg[K, lb[:, None]], 0.0)
    step = gamma / Z_seg[la, la]
    return S_seg[la, lb] - step * terms.sum(axis=1) + np.where(la == lb, step, 0.0)


def _jor_states(
    Z_seg: np.ndarray, x_seg: np.ndarray, la: np.ndarray, z_hat: np.ndarray, gamma: float, L: int
) -> np.ndarray:
    """x_a nuevo = x_a - gamma/z_aa (sum_k z_ak x_k - z_hat_a)."""

    K, valid = band_window(la, L, Z_seg.shape[0])
    weights = np.where(valid, Z_seg[la[:, None], K], 0.0)
    acc = np.einsum("qk,qk...->q...", weights, x_seg[K])
    step = (gamma / Z_seg[la, la]).reshape((-1,) + (1,) * (x_seg.ndim - 1))
    return x_seg[la] - step * (acc - z_hat)


def _mirror_upper(A: np.ndarray, L: int) -> np.ndarray:
    """Matriz simetrica L-bandada construida con la parte superior de A."""

    n = A.shape[0]
    B = np.zeros_like(A)
    for d in range(L + 1):
        idx = np.arange(n - d)
        B[idx, idx + d] = A[idx, idx + d]
        B[idx + d, idx] = A[idx, idx + d]
    return B


def _band_pairs(n: int, L: int) -> Tuple[np.ndarray, np.ndarray]:
    a = np.concatenate([np.arange(n - d) for d in range(L + 1)])
    b = np.concatenate([np.arange(d, n) for d in range(L + 1)])
    return a, b


def _check_banded(Z: np.ndarray, L: int) -> None:
    n = Z.shape[0]
    if not np.allclose(Z, Z.T, atol=1e-10, rtol=1e-12):
        raise BandError("Z no es simetrica")
    outside = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) > L
    if np.any(Z[outside] != 0):
        raise BandError(f"Z no es exactamente {L}-bandada")


@dataclass
class CentralDiciResult:
    """DICI-OR en forma matricial: banda final, completado y errores por iterado."""

    band: BandProfile
    completion: np.ndarray
    iterations: int
    residual: float
    converged: bool
    pivot_failures: int
    errors: List[float] = field(default_factory=list)


def dici_or_centralized(
    Z: np.ndarray,
    L: int,
    cfg: JorConfig,
    S0: np.ndarray | None = None,
    reference: np.ndarray | None = None,
) -> CentralDiciResult:
    """DICI-OR sobre la red completa en forma matricial.

    Misma aritmetica que la version distribuida con un unico segmento. El
    error por iterado usa el completado total de la banda (colapso de todas
    las entradas fuera de banda). Por defecto S_0 = M^{-1}.

    Raises:
        BandError: Si Z no es simetrica o no es L-bandada.
        JorDivergenceError: Si el radio espectral de P_gamma es >= 1.
    """

    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    L = min(L, n - 1)
    _check_banded(Z, L)
    check_jor(Z, cfg.gamma)
    la, lb = _band_pairs(n, L)
    S = _mirror_upper(np.diag(1.0 / np.diag(Z)) if S0 is None else np.asarray(S0, float), L)
    top = None if reference is not None else 2 * L
    failures = collapse_segment(S, L, max_offset=top, strict=cfg.strict)
    errors = [float(np.linalg.norm(S - reference, 2))] if reference is not None else []
    stopper = _Stopper(cfg)
    while stopper.wants_round():
        values = _jor_pairs(Z, S, la, lb, cfg.gamma, L)
        stopper.record(float(np.max(np.abs(values - S[la, lb]))))
        S = np.zeros((n, n))
        S[la, lb] = values
        S[lb, la] = values
        failures += collapse_segment(S, L, max_offset=top, strict=cfg.strict)
        if reference is not None:
            errors.append(float(np.linalg.norm(S - reference, 2)))
    converged = stopper.finish()
    if top is not None:
        collapse_segment(S, L, strict=False)
    return CentralDiciResult(
        band=band_project(S, L),
        completion=S,
        iterations=stopper.rounds,
        residual=stopper.residual,
        converged=converged,
        pivot_failures=failures,
        errors=errors,
    )


# -----------------------------------------------------------------------------
# Reparto de la banda entre sensores
# -----------------------------------------------------------------------------

def contiguous_segments(indices: np.ndarray) -> Tuple[Segment, ...]:
    """Tramos [inicio, fin) de indices consecutivos de un array ordenado."""

    if indices.size == 0:
        return ()
    breaks = np.flatnonzero(np.diff(indices) > 1)
    starts = np.concatenate([[indices[0]], indices[breaks + 1]])
    stops = np.concatenate([indices[breaks], [indices[-1]]]) + 1
    return tuple((int(s), int(e)) for s, e in zip(starts, stops))


def collapse_cost(m: int, L: int, top: int) -> int:
    """Operaciones del colapso de un segmento m x m hasta el desplazamiento ``top``."""

    top = min(top, m - 1)
    if L == 0 or top <= L:
        return 0
    weights = (m - L) * (L ** 3 // 3 + 2 * L ** 2)
    fill = sum((m - d) * 2 * L for d in range(L + 1, top + 1))
    return int(weights + fill)


class PairGather:
    """Plan para reunir en cada sensor las entradas de banda de sus segmentos.

    Cada sensor declara tramos contiguos de indices; para cada tramo recibe de
    los propietarios todas las entradas |i - j| <= L internas al tramo.
    """

    def __init__(self, layout: "BandLayout", segments: Mapping[int, Sequence[Segment]]) -> None:
        self.layout = layout
        self.segments = {sid: tuple(segs) for sid, segs in segments.items()}
        self.routes: Dict[int, Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]] = {}
        L = layout.L
        for sid, segs in self.segments.items():
            parts: Dict[int, List[List[np.ndarray]]] = defaultdict(lambda: [[], [], [], []])
            for seg_id, (s0, s1) in enumerate(segs):
                for d in range(min(L, s1 - s0 - 1) + 1):
                    a = np.arange(s0, s1 - d)
                    owners = layout.pair_owner[d, a]
                    pos = layout.pair_index[d, a]
                    for owner in np.unique(owners):
                        mask = owners == owner
                        bucket = parts[int(owner)]
                        bucket[0].append(pos[mask])
                        bucket[1].append(np.full(int(mask.sum()), seg_id))
                        bucket[2].append(a[mask] - s0)
                        bucket[3].append(a[mask] + d - s0)
            self.routes[sid] = {
                owner: tuple(np.concatenate(chunks) for chunks in bucket)
                for owner, bucket in sorted(parts.items())
            }

    def gather(
        self,
        owned: Mapping[int, np.ndarray],
        network: CommNetwork | None,
        phase: str,
    ) -> Dict[int, List[np.ndarray]]:
        """Devuelve, por sensor, una matriz densa por tramo con la banda rellena."""

        received: Dict[int, Dict[int, np.ndarray]] = {}
        if network is not None:
            outgoing: Dict[int, List[Tuple[int, np.ndarray]]] = defaultdict(list)
            for sid in sorted(self.routes):
                for owner, (pos, *_rest) in self.routes[sid].items():
                    if owner != sid:
                        outgoing[owner].append((sid, owned[owner][pos]))
            inboxes = network.exchange(phase, outgoing)
            received = {sid: {msg.src: msg.payload for msg in inbox} for sid, inbox in inboxes.items()}

        result: Dict[int, List[np.ndarray]] = {}
        for sid, segs in self.segments.items():
            mats = [np.zeros((s1 - s0, s1 - s0)) for s0, s1 in segs]
            for owner, (pos, seg, i, j) in self.routes[sid].items():
                if owner == sid or network is None:
                    values = owned[owner][pos]
                else:
                    values = received[sid][owner]
                for k, mat in enumerate(mats):
                    mask = seg == k
                    mat[i[mask], j[mask]] = values[mask]
                    mat[j[mask], i[mask]] = values[mask]
            result[sid] = mats
        return result


class StateGather:
    """Plan para reunir en cada sensor los valores de un conjunto de estados."""

    def __init__(self, layout: "BandLayout", indices: Mapping[int, np.ndarray]) -> None:
        self.indices = {sid: np.asarray(idx, dtype=int) for sid, idx in indices.items()}
        self.routes: Dict[int, Dict[int, Tuple[np.ndarray, np.ndarray]]] = {}
        for sid, idx in self.indices.items():
            owners = layout.state_owner[idx]
            self.routes[sid] = {
                int(owner): (layout.state_index[idx[owners == owner]], np.flatnonzero(owners == owner))
                for owner in np.unique(owners)
            }

    def gather(
        self, owned: Mapping[int, np.ndarray], network: CommNetwork | None, phase: str
    ) -> Dict[int, np.ndarray]:
        received: Dict[int, Dict[int, np.ndarray]] = {}
        if network is not None:
            outgoing: Dict[int, List[Tuple[int, np.ndarray]]] = defaultdict(list)
            for sid in sorted(self.routes):
                for owner, (pos, _) in self.routes[sid].items():
                    if owner != sid:
                        outgoing[owner].append((sid, owned[owner][pos]))
            inboxes = network.exchange(phase, outgoing)
            received = {sid: {msg.src: msg.payload for msg in inbox} for sid, inbox in inboxes.items()}

        sample = next(iter(owned.values()))
        result: Dict[int, np.ndarray] = {}
        for sid, idx in self.indices.items():
            values = np.zeros((idx.size,) + sample.shape[1:])
            for owner, (pos, dest) in self.routes[sid].items():
                if owner == sid or network is None:
                    values[dest] = owned[owner][pos]
                else:
                    values[dest] = received[sid][owner]
            result[sid] = values
        return result


class BandLayout:
    """Propiedad de pares y estados, halos y planes de intercambio.

    El halo de un sensor es la union de [i - L, i + L] para i en su conjunto
    de corte; contiene todo lo que el sensor lee para iterar sus pares y
    estados propios.

    Raises:
        TopologyError: Si algun par de la banda no esta contenido en ningun
            conjunto de corte.
    """

    def __init__(self, subsystems: Sequence[SubSystem], L: int) -> None:
        if not subsystems:
            raise TopologyError("Se necesita al menos un subsistema")
        n = subsystems[0].n_total
        self.n = n
        self.L = L = min(L, n - 1)
        self.sensors: Tuple[int, ...] = tuple(sorted(sub.sensor_id for sub in subsystems))
        self.cutsets = {sub.sensor_id: np.asarray(sub.cutset, dtype=int) for sub in subsystems}

        self.pair_owner = np.full((L + 1, n), -1, dtype=int)
        for sid in self.sensors:
            C = self.cutsets[sid]
            inside = np.zeros(n, dtype=bool)
            inside[C] = True
            for d in range(L + 1):
                a = C[C + d < n]
                a = a[inside[a + d]]
                free = self.pair_owner[d, a] == -1
                self.pair_owner[d, a[free]] = sid
        for d in range(L + 1):
            missing = np.flatnonzero(self.pair_owner[d, : n - d] == -1)
            if missing.size:
                a = int(missing[0])
                raise TopologyError(
                    f"El par ({a}, {a + d}) de la banda no esta en ningun conjunto de corte", state=a
                )

        self.pair_index = np.full((L + 1, n), -1, dtype=int)
        self.owned_pairs: Dict[int, np.ndarray] = {}
        for sid in self.sensors:
            d_arr, a_arr = np.nonzero(self.pair_owner == sid)
            self.pair_index[d_arr, a_arr] = np.arange(d_arr.size)
            self.owned_pairs[sid] = np.column_stack([a_arr, a_arr + d_arr])

        self.state_owner = self.pair_owner[0].copy()
        self.state_index = np.full(n, -1, dtype=int)
        self.owned_states: Dict[int, np.ndarray] = {}
        for sid in self.sensors:
            states = np.flatnonzero(self.state_owner == sid)
            self.state_index[states] = np.arange(states.size)
            self.owned_states[sid] = states

        self.halo: Dict[int, np.ndarray] = {}
        self.halo_segments: Dict[int, Tuple[Segment, ...]] = {}
        for sid in self.sensors:
            mark = np.zeros(n + 1, dtype=int)
            C = self.cutsets[sid]
            np.add.at(mark, np.maximum(C - L, 0), 1)
            np.add.at(mark, np.minimum(C + L + 1, n), -1)
            halo = np.flatnonzero(np.cumsum(mark)[:n] > 0)
            self.halo[sid] = halo
            self.halo_segments[sid] = contiguous_segments(halo)

        self.halo_pairs = PairGather(self, self.halo_segments)
        self.halo_states = StateGather(self, self.halo)
        self._pair_locations = {sid: self._locate(sid, self.owned_pairs[sid]) for sid in self.sensors}
        self._state_locations = {
            sid: self._locate(sid, np.column_stack([self.owned_states[sid]] * 2)) for sid in self.sensors
        }

    @classmethod
    def from_subsystems(cls, subsystems: Sequence[SubSystem], L: int) -> "BandLayout":
        return cls(subsystems, L)

    def _locate(self, sid: int, pairs: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        starts = np.array([s0 for s0, _ in self.halo_segments[sid]])
        seg = np.searchsorted(starts, pairs[:, 0], side="right") - 1
        return seg, pairs[:, 0] - starts[seg], pairs[:, 1] - starts[seg]

    def pair_locations(self, sid: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(tramo, i local, j local) de los pares propios dentro del halo."""

        return self._pair_locations[sid]

    def state_locations(self, sid: int) -> Tuple[np.ndarray, np.ndarray]:
        seg, la, _ = self._state_locations[sid]
        return seg, la

    def segment_offsets(self, sid: int) -> List[int]:
        """Posicion de cada tramo dentro del array de halo."""

        sizes = [s1 - s0 for s0, s1 in self.halo_segments[sid]]
        return [int(v) for v in np.concatenate([[0], np.cumsum(sizes)[:-1]])]

    def owned_from_local(self, sid: int, local: np.ndarray) -> np.ndarray:
        """Valores de los pares propios leidos de una matriz local sobre el conjunto de corte."""

        C = self.cutsets[sid]
        pairs = self.owned_pairs[sid]
        return local[np.searchsorted(C, pairs[:, 0]), np.searchsorted(C, pairs[:, 1])]

    def owned_states_from_local(self, sid: int, local: np.ndarray) -> np.ndarray:
        return local[np.searchsorted(self.cutsets[sid], self.owned_states[sid])]

    def assemble_band(self, owned: Mapping[int, np.ndarray], kind: str = "covariance") -> BandProfile:
        """Banda global a partir de los valores de los propietarios (vista del arnes)."""

        data = np.zeros((self.L + 1, self.n))
        for sid in self.sensors:
            pairs = self.owned_pairs[sid]
            d = pairs[:, 1] - pairs[:, 0]
            data[self.L - d, pairs[:, 1]] = owned[sid]
        return BandProfile(n=self.n, L=self.L, data=data, kind=kind)

    def assemble_states(self, owned: Mapping[int, np.ndarray]) -> np.ndarray:
        sample = next(iter(owned.values()))
        out = np.zeros((self.n,) + sample.shape[1:])
        for sid in self.sensors:
            out[self.owned_states[sid]] = owned[sid]
        return out

    def local_blocks(self, matrix: np.ndarray) -> Dict[int, np.ndarray]:
        """Bloques principales sobre cada conjunto de corte."""

        return {sid: matrix[np.ix_(C, C)] for sid, C in self.cutsets.items()}

    def local_vectors(self, vector: np.ndarray) -> Dict[int, np.ndarray]:
        return {sid: vector[C] for sid, C in self.cutsets.items()}

    def round_cost(self, sid: int) -> int:
        """Operaciones de una ronda DICI en el sensor: colapso de sus tramos y pares propios."""

        L = self.L
        cost = sum(collapse_cost(s1 - s0, L, 2 * L) for s0, s1 in self.halo_segments[sid])
        return cost + int(self.owned_pairs[sid].shape[0]) * (2 * (2 * L + 1) + 3)

    def vector_round_cost(self, sid: int) -> int:
        return int(self.owned_states[sid].size) * (2 * (2 * self.L + 1) + 3)


# -----------------------------------------------------------------------------
# DICI-OR distribuido
# -----------------------------------------------------------------------------

@dataclass
class DiciResult:
    """Banda de S = Z^{-1} repartida entre propietarios y vistas de halo por sensor."""

    layout: BandLayout
    owned: Dict[int, np.ndarray]
    segments: Dict[int, List[np.ndarray]]
    iterations: int
    residual: float
    converged: bool
    pivot_failures: int
    round_flops: Dict[int, int]

    def band(self) -> BandProfile:
        return self.layout.assemble_band(self.owned)

    def trace(self) -> float:
        total = 0.0
        for sid in self.layout.sensors:
            pairs = self.layout.owned_pairs[sid]
            total += float(np.sum(self.owned[sid][pairs[:, 0] == pairs[:, 1]]))
        return total

    def local_covariance(self, sid: int) -> np.ndarray:
        """S^(l): entradas de banda del halo restringidas al conjunto de corte."""

        C = self.layout.cutsets[sid]
        segs = self.layout.halo_segments[sid]
        starts = np.array([s0 for s0, _ in segs])
        seg = np.searchsorted(starts, C, side="right") - 1
        local = C - starts[seg]
        out = np.zeros((C.size, C.size))
        for p in range(C.size):
            same = seg == seg[p]
            out[p, same] = self.segments[sid][seg[p]][local[p], local[same]]
        return out


@dataclass
class VectorResult:
    """Solucion distribuida de Z x = z_hat: valores propios y vista de halo por sensor."""

    layout: BandLayout
    owned: Dict[int, np.ndarray]
    halo_values: Dict[int, np.ndarray]
    iterations: int
    residual: float
    converged: bool

    def assemble(self) -> np.ndarray:
        return self.layout.assemble_states(self.owned)

    def cutset_values(self, sid: int) -> np.ndarray:
        halo = self.layout.halo[sid]
        return self.halo_values[sid][np.searchsorted(halo, self.layout.cutsets[sid])]


class DiciSolver:
    """Sensores que ejecutan DICI-OR (matriz) y JOR distribuido (vector) por rondas.

    Args:
        layout: Reparto de la banda.
        cfg: Parametros JOR.
        network: Red simulada; sin ella los valores se copian directamente.
        initial: "local" usa (Z^(l))^{-1} de cada sensor como S_0; "jacobi"
            usa M^{-1}.
    """

    def __init__(
        self,
        layout: BandLayout,
        cfg: JorConfig,
        network: CommNetwork | None = None,
        initial: str = "local",
    ) -> None:
        if initial not in INITIAL_MODES:
            raise ConfigError(f"Condicion inicial desconocida: {initial}")
        self.layout = layout
        self.cfg = cfg
        self.network = network
        self.initial = initial
        self.Z_locals: Dict[int, np.ndarray] = {}
        self.Z_segments: Dict[int, List[np.ndarray]] = {}
        self._logger = get_logger(fase=DICI_PHASE)

    def load(self, Z_locals: Mapping[int, np.ndarray]) -> "DiciSolver":
        """Guarda las Z^(l) y reune la banda de Z sobre cada halo."""

        self.Z_locals = {sid: np.asarray(Z_locals[sid], dtype=float) for sid in self.layout.sensors}
        owned = {sid: self.layout.owned_from_local(sid, self.Z_locals[sid]) for sid in self.layout.sensors}
        self.Z_segments = self.layout.halo_pairs.gather(owned, self.network, DICI_PHASE)
        return self

    def _flops(self, sid: int, count: int) -> None:
        if self.network is not None:
            self.network.add_flops(sid, DICI_PHASE, count)

    def _initial_pairs(self, sid: int) -> np.ndarray:
        local = self.Z_locals[sid]
        if self.initial == "jacobi":
            pairs = self.layout.owned_pairs[sid]
            values = self.layout.owned_from_local(sid, local)
            diagonal = pairs[:, 0] == pairs[:, 1]
            start = np.zeros(values.size)
            start[diagonal] = 1.0 / values[diagonal]
            return start
        try:
            inverse = spd_inverse(local)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"Z^({sid}) no es definida positiva") from exc
        self._flops(sid, local.shape[0] ** 3)
        return self.layout.owned_from_local(sid, inverse)

    def invert(self) -> DiciResult:
        """Banda de Z^{-1} por DICI-OR.

        Raises:
            CollapseError: Si strict y un pivote del colapso no es SPD.
            DiciConvergenceError: Si strict y se agota max_iter.
        """

        layout, cfg, L = self.layout, self.cfg, self.layout.L
        owned = {sid: self._initial_pairs(sid) for sid in layout.sensors}
        segments = layout.halo_pairs.gather(owned, self.network, DICI_PHASE)
        round_flops = {sid: layout.round_cost(sid) for sid in layout.sensors}
        failures = 0
        stopper = _Stopper(cfg)
        while stopper.wants_round():
            residual = 0.0
            updated: Dict[int, np.ndarray] = {}
            for sid in layout.sensors:
                segs = segments[sid]
                for (s0, _), seg in zip(layout.halo_segments[sid], segs):
                    try:
                        failures += collapse_segment(seg, L, max_offset=2 * L, strict=cfg.strict)
                    except CollapseError as exc:
                        raise CollapseError(s0 + exc.index) from None
                seg_id, la, lb = layout.pair_locations(sid)
                new = np.empty(la.size)
                for k, seg in enumerate(segs):
                    mask = seg_id == k
                    if np.any(mask):
                        new[mask] = _jor_pairs(self.Z_segments[sid][k], seg, la[mask], lb[mask], cfg.gamma, L)
                if new.size:
                    residual = max(residual, float(np.max(np.abs(new - owned[sid]))))
                updated[sid] = new
                self._flops(sid, round_flops[sid])
            owned = updated
            stopper.record(residual)
            segments = layout.halo_pairs.gather(owned, self.network, DICI_PHASE)
            if self._logger.isEnabledFor(logging.DEBUG):
                self._logger.debug("Ronda DICI %d: cambio maximo %.3e", stopper.rounds, residual)
        converged = stopper.finish()
        if failures:
            self._logger.warning("Colapso con %d pivotes no definidos positivos", failures)
        return DiciResult(
            layout=layout,
            owned=owned,
            segments=segments,
            iterations=stopper.rounds,
            residual=stopper.residual,
            converged=converged,
            pivot_failures=failures,
            round_flops=round_flops,
        )

    def solve(self, z_locals: Mapping[int, np.ndarray]) -> VectorResult:
        """x tal que Z x = z_hat con JOR distribuido; arranca de la solucion local.

        Raises:
            DiciConvergenceError: Si strict y se agota max_iter.
        """

        layout, cfg, L = self.layout, self.cfg, self.layout.L
        owned: Dict[int, np.ndarray] = {}
        z_owned: Dict[int, np.ndarray] = {}
        for sid in layout.sensors:
            z_local = np.asarray(z_locals[sid], dtype=float)
            try:
                factor = linalg.cho_factor(self.Z_locals[sid], lower=True, check_finite=False)
            except linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(f"Z^({sid}) no es definida positiva") from exc
            owned[sid] = layout.owned_states_from_local(sid, linalg.cho_solve(factor, z_local))
            z_owned[sid] = layout.owned_states_from_local(sid, z_local)
        halo_values = layout.halo_states.gather(owned, self.network, VECTOR_PHASE)
        stopper = _Stopper(cfg)
        while stopper.wants_round():
            residual = 0.0
            updated: Dict[int, np.ndarray] = {}
            for sid in layout.sensors:
                seg_id, la = layout.state_locations(sid)
                offsets = layout.segment_offsets(sid)
                new = np.empty_like(owned[sid])
                for k, (s0, s1) in enumerate(layout.halo_segments[sid]):
                    mask = seg_id == k
                    if np.any(mask):
                        x_seg = halo_values[sid][offsets[k] : offsets[k] + s1 - s0]
                        new[mask] = _jor_states(
                            self.Z_segments[sid][k], x_seg, la[mask], z_owned[sid][mask], cfg.gamma, L
                        )
                if new.size:
                    residual = max(residual, float(np.max(np.abs(new - owned[sid]))))
                updated[sid] = new
                if self.network is not None:
                    self.network.add_flops(sid, VECTOR_PHASE, layout.vector_round_cost(sid))
            owned = updated
            stopper.record(residual)
            halo_values = layout.halo_states.gather(owned, self.network, VECTOR_PHASE)
        converged = stopper.finish()
        return VectorResult(layout, owned, halo_values, stopper.rounds, stopper.residual, converged)


def _as_locals(layout: BandLayout, values: np.ndarray | Mapping[int, np.ndarray], matrix: bool) -> Dict[int, np.ndarray]:
    if isinstance(values, Mapping):
        return dict(values)
    values = np.asarray(values, dtype=float)
    if matrix:
        _check_banded(values, layout.L)
        return layout.local_blocks(values)
    return layout.local_vectors(values)


def dici_or_band_inverse(
    Z: np.ndarray | Mapping[int, np.ndarray],
    layout: BandLayout,
    cfg: JorConfig,
    network: CommNetwork | None = None,
    initial: str = "local",
) -> DiciResult:
    """Banda de Z^{-1} con DICI-OR a partir de las ventanas locales Z^(l).

    ``Z`` puede ser la matriz global L-bandada (se trocea por conjuntos de
    corte) o directamente el diccionario de bloques locales.
    """

    solver = DiciSolver(layout, cfg, network=network, initial=initial).load(_as_locals(layout, Z, True))
    return solver.invert()


def dici_solve_vector(
    Z: np.ndarray | Mapping[int, np.ndarray],
    z_hat: np.ndarray | Mapping[int, np.ndarray],
    layout: BandLayout,
    cfg: JorConfig,
    network: CommNetwork | None = None,
) -> VectorResult:
    """x_hat con Z x_hat = z_hat por JOR distribuido sobre la banda (sin colapso)."""

    solver = DiciSolver(layout, cfg, network=network).load(_as_locals(layout, Z, True))
    return solver.solve(_as_locals(layout, z_hat, False))


# -----------------------------------------------------------------------------
# Experimentos de contraccion y cota de error
# -----------------------------------------------------------------------------

class ContractionSample(NamedTuple):
    alpha: float
    L: int
    resamples: int


def upsilon(X: np.ndarray, Z: np.ndarray, L: int, gamma: float) -> np.ndarray:
    """Composicion colapso tras P_gamma: completa la banda superior de P X."""

    m_inv = 1.0 / np.diag(Z)
    PX = X - gamma * m_inv[:, None] * (Z @ X)
    B = _mirror_upper(PX, L)
    collapse_segment(B, L, strict=True)
    return B


def contraction_trial(
    n: int, rng: np.random.Generator, gamma: float = 0.1, max_resamples: int = 1000
) -> ContractionSample:
    """Cociente ||Y(X) - Y(Y)||_2 / ||X - Y||_2 con X, Y, Z SPD aleatorias y L en [1, n/2].

    Se vuelve a muestrear cuando el colapso encuentra un pivote no SPD o
    cuando X = Y.
    """

    if n < 2:
        raise ConfigError("contraction_trial requiere n >= 2")
    for attempt in range(max_resamples):
        L = int(rng.integers(1, max(n // 2, 1) + 1))
        Z = random_spd(n, rng)
        X = random_spd(n, rng)
        Y = random_spd(n, rng)
        denom = float(np.linalg.norm(X - Y, 2))
        if denom == 0.0:
            continue
        try:
            diff = upsilon(X, Z, L, gamma) - upsilon(Y, Z, L, gamma)
        except CollapseError:
            continue
        return ContractionSample(float(np.linalg.norm(diff, 2)) / denom, L, attempt)
    raise DkfError(f"Sin muestra valida tras {max_resamples} intentos")


@dataclass
class ErrorBoundStats:
    """Estadisticos por iteracion de ||E_JOR||_2 - ||E_DICI||_2 sobre los ensayos."""

    max_diff: np.ndarray
    min_diff: np.ndarray
    mean_diff: np.ndarray
    final_jor_error: np.ndarray
    final_dici_error: np.ndarray
    pivot_failures: int

    def rows(self) -> List[Tuple[int, float, float, float]]:
        return [
            (t, float(hi), float(lo), float(mean))
            for t, (hi, lo, mean) in enumerate(zip(self.max_diff, self.min_diff, self.mean_diff))
        ]


def error_bound_experiment(
    n: int,
    L: int,
    trials: int,
    cfg: JorConfig,
    seed: int,
    iterations: int,
) -> ErrorBoundStats:
    """Compara el error espectral de JOR y DICI-OR sobre las mismas Z L-bandadas.

    Ambos parten de M^{-1} y ejecutan ``iterations`` rondas; el error de
    DICI-OR usa el completado total de su banda.
    """

    fixed = JorConfig(cfg.gamma, cfg.max_iter, cfg.tol, cfg.patience, False, iterations + 1)
    diffs = np.zeros((trials, iterations + 1))
    final_jor = np.zeros(trials)
    final_dici = np.zeros(trials)
    failures = 0
    logger = get_logger(fase="cota_error")
    for trial in range(trials):
        rng = trial_rng(seed, trial)
        Z = random_banded_spd(n, L, rng)
        reference = np.linalg.inv(Z)
        jor = jor_inverse(Z, fixed, reference=reference)
        dici = dici_or_centralized(Z, L, fixed, reference=reference)
        failures += dici.pivot_failures
        diffs[trial] = np.asarray(jor.errors) - np.asarray(dici.errors)
        final_jor[trial] = jor.errors[-1]
        final_dici[trial] = dici.errors[-1]
        logger.debug("Ensayo %d: min diferencia %.3e", trial, diffs[trial].min())
    return ErrorBoundStats(
        max_diff=diffs.max(axis=0),
        min_diff=diffs.min(axis=0),
        mean_diff=diffs.mean(axis=0),
        final_jor_error=final_jor,
        final_dici_error=final_dici,
        pivot_failures=failures,
    )
