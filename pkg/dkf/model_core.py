"""Modelo global disperso: construccion, simulacion y reordenacion de estados.

El sistema es x_{k+1} = F x_k + G u_k, y_k = H x_k + w_k con u_k ~ N(0, Q),
w_k ~ N(0, R) y x_0 ~ N(0, S0). H apila los bloques H_l de los N sensores y
R es diagonal por bloques con un bloque R_l por sensor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee

from dkf.errors import ModelError
from utils.export import write_csv

PSD_CLIP = 1e-12
SYMMETRY_ATOL = 1e-10

SensorRows = Tuple[Tuple[int, int, int], ...]


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """Sistema global (F, G, Q, H, R, S0) y particion de H por sensor.

    ``sensor_rows`` contiene tuplas ``(sensor_id, inicio, fin)`` con el rango
    de filas de H (fin exclusivo) de cada sensor.
    """

    F: sparse.csr_matrix
    G: sparse.csr_matrix
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray
    S0: np.ndarray
    sensor_rows: SensorRows
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def N(self) -> int:
        return len(self.sensor_rows)

    @property
    def noise_dim(self) -> int:
        return self.G.shape[1]

    @property
    def sensor_ids(self) -> Tuple[int, ...]:
        return tuple(sid for sid, _, _ in self.sensor_rows)

    def _rows(self, sensor_id: int) -> slice:
        for sid, start, stop in self.sensor_rows:
            if sid == sensor_id:
                return slice(start, stop)
        raise ModelError(f"Sensor desconocido: {sensor_id}")

    def H_block(self, sensor_id: int) -> np.ndarray:
        """Bloque H_l (p_l x n) del sensor."""

        return self.H[self._rows(sensor_id)]

    def R_block(self, sensor_id: int) -> np.ndarray:
        rows = self._rows(sensor_id)
        return self.R[rows, rows]

    def validate(self, strict_pd: bool = True) -> None:
        """Comprueba dimensiones, simetria y la particion de H.

        Args:
            strict_pd: Exige Q, R_l y S0 definidas positivas (Cholesky); si es
                False basta con semidefinidas, lo que admite ruido nulo.

        Raises:
            ModelError: Con el primer invariante roto.
        """

        n = self.n
        if self.F.shape != (n, n):
            raise ModelError(f"F debe ser cuadrada, forma {self.F.shape}")
        if self.G.shape[0] != n:
            raise ModelError(f"G debe tener {n} filas, forma {self.G.shape}")
        j = self.noise_dim
        if self.Q.shape != (j, j):
            raise ModelError(f"Q debe ser {j}x{j}, forma {self.Q.shape}")
        if self.H.shape[1] != n:
            raise ModelError(f"H debe tener {n} columnas, forma {self.H.shape}")
        p = self.p
        if self.R.shape != (p, p):
            raise ModelError(f"R debe ser {p}x{p}, forma {self.R.shape}")
        if self.S0.shape != (n, n):
            raise ModelError(f"S0 debe ser {n}x{n}, forma {self.S0.shape}")

        cursor = 0
        seen = set()
        for sid, start, stop in self.sensor_rows:
            if sid in seen:
                raise ModelError(f"Sensor repetido en sensor_rows: {sid}")
            seen.add(sid)
            if start != cursor or stop <= start:
                raise ModelError(f"Las filas de los sensores no particionan 0..{p}: {self.sensor_rows}")
            cursor = stop
        if cursor != p:
            raise ModelError(f"Las filas de los sensores no particionan 0..{p}: {self.sensor_rows}")

        mask = np.zeros((p, p), dtype=bool)
        for _, start, stop in self.sensor_rows:
            mask[start:stop, start:stop] = True
        if np.any(self.R[~mask] != 0):
            raise ModelError("R no es diagonal por bloques segun sensor_rows")

        for name, matrix in (("Q", self.Q), ("R", self.R), ("S0", self.S0)):
            if not np.allclose(matrix, matrix.T, atol=SYMMETRY_ATOL):
                raise ModelError(f"{name} no es simetrica")
            if strict_pd:
                blocks = [matrix]
                if name == "R":
                    blocks = [self.R_block(sid) for sid in self.sensor_ids]
                for block in blocks:
                    try:
                        linalg.cholesky(block, lower=True)
                    except linalg.LinAlgError as exc:
                        raise ModelError(f"{name} no es definida positiva") from exc
            elif matrix.size and np.linalg.eigvalsh(matrix).min() < -1e-9:
                raise ModelError(f"{name} no es semidefinida positiva")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Realizacion de estados x_0..x_K y observaciones y_0..y_K."""

    states: np.ndarray
    observations: np.ndarray
    seed: int | None

    def __len__(self) -> int:
        return self.states.shape[0]

    def to_csv(self, states_path: str | Path, observations_path: str | Path) -> None:
        n = self.states.shape[1]
        p = self.observations.shape[1]
        write_csv(
            states_path,
            ["k"] + [f"x_{i}" for i in range(n)],
            ([k, *row] for k, row in enumerate(self.states)),
        )
        write_csv(
            observations_path,
            ["k"] + [f"y_{i}" for i in range(p)],
            ([k, *row] for k, row in enumerate(self.observations)),
        )


# -----------------------------------------------------------------------------
# Constructores
# -----------------------------------------------------------------------------

def _shift_matrix(size: int) -> sparse.csr_matrix:
    """Tridiagonal con ceros en la diagonal y unos en las subdiagonales."""

    ones = np.ones(size - 1)
    return sparse.diags([ones, ones], [-1, 1], shape=(size, size), format="csr")


def build_elliptic_model(
    M: int,
    J: int,
    mu: float,
    beta_h: float,
    beta_v: float,
    dt: float,
    noise_sites: Sequence[int] | None = None,
    q: float = 1.0,
    H: np.ndarray | None = None,
    sensor_rows: SensorRows | None = None,
    r: float = 1.0,
    s0: float = 1.0,
) -> GlobalModel:
    """Discretiza el operador eliptico en una malla M x J.

    F = I + dt * F_c con F_c = I_M (x) B + A_M (x) C, B = mu I + beta_h A_J y
    C = beta_v I. El termino de contorno b_c se omite. Los estados se ordenan
    por filas de la malla (indice = fila * J + columna).

    Args:
        M: Filas de la malla (>= 2).
        J: Columnas de la malla (>= 2).
        mu: Coeficiente de la diagonal.
        beta_h: Acoplamiento horizontal.
        beta_v: Acoplamiento vertical.
        dt: Intervalo de muestreo (> 0).
        noise_sites: Indices de estado donde entra ruido; por defecto todos.
        q: Varianza del ruido de estado.
        H: Matriz de observacion; por defecto la identidad (un sensor por estado).
        sensor_rows: Particion de H; por defecto una fila por sensor.
        r: Varianza del ruido de observacion.
        s0: Varianza inicial del estado.

    Returns:
        GlobalModel validado.

    Raises:
        ModelError: Si dt <= 0, la malla es degenerada o un sitio esta fuera de rango.
    """

    if M < 2 or J < 2:
        raise ModelError(f"La malla debe ser al menos 2x2 (recibido {M}x{J})")
    if dt <= 0:
        raise ModelError(f"dt debe ser positivo (recibido {dt})")
    n = M * J
    sites = list(range(n)) if noise_sites is None else [int(site) for site in noise_sites]
    bad = [site for site in sites if site < 0 or site >= n]
    if bad:
        raise ModelError(f"Sitios de ruido fuera de rango 0..{n - 1}: {bad}")

    B = mu * sparse.identity(J, format="csr") + beta_h * _shift_matrix(J)
    C = beta_v * sparse.identity(J, format="csr")
    F_c = sparse.kron(sparse.identity(M), B) + sparse.kron(_shift_matrix(M), C)
    F = (sparse.identity(n) + dt * F_c).tocsr()
    F.eliminate_zeros()

    G = sparse.csr_matrix(
        (np.full(len(sites), dt), (sites, np.arange(len(sites)))), shape=(n, len(sites))
    )
    if H is None:
        H = np.eye(n)
    H = np.asarray(H, dtype=float)
    if sensor_rows is None:
        sensor_rows = tuple((row, row, row + 1) for row in range(H.shape[0]))

    model = GlobalModel(
        F=F,
        G=G,
        Q=q * np.eye(len(sites)),
        H=H,
        R=r * np.eye(H.shape[0]),
        S0=s0 * np.eye(n),
        sensor_rows=tuple(sensor_rows),
        meta={
            "kind": "elliptic",
            "grid": [M, J],
            "coefficients": {"mu": mu, "beta_h": beta_h, "beta_v": beta_v, "dt": dt},
            "noise_sites": sites,
        },
    )
    model.validate(strict_pd=False)
    return model


def window_starts(n: int, sensors: int, window: int) -> np.ndarray:
    """Inicios equiespaciados de ventanas de observacion que cubren 0..n-1."""

    if window > n:
        raise ModelError(f"La ventana ({window}) no cabe en n={n}")
    if sensors == 1:
        return np.zeros(1, dtype=int)
    return np.rint(np.linspace(0, n - window, sensors)).astype(int)


def window_observations(
    n: int, sensors: int, window: int, rng: np.random.Generator
) -> np.ndarray:
    """H con una fila por sensor y entradas Normal(0, 1) en ventanas solapadas."""

    if sensors * window < n:
        raise ModelError(f"{sensors} ventanas de {window} estados no cubren n={n}")
    H = np.zeros((sensors, n))
    for row, start in enumerate(window_starts(n, sensors, window)):
        H[row, start : start + window] = rng.standard_normal(window)
    return H


def random_banded_dynamics(
    n: int, f_bandwidth: int, density: float, rng: np.random.Generator
) -> sparse.csr_matrix:
    """F aleatoria L-bandada con norma espectral 1 (diagonal siempre ocupada)."""

    rows, cols = np.nonzero(np.abs(np.subtract.outer(np.arange(n), np.arange(n))) <= f_bandwidth)
    keep = (rows == cols) | (rng.random(rows.size) < density)
    values = rng.standard_normal(int(keep.sum()))
    F = sparse.csr_matrix((values, (rows[keep], cols[keep])), shape=(n, n))
    norm = np.linalg.norm(F.toarray(), 2)
    return (F / norm).tocsr()


def build_random_model(
    n: int,
    sensors: int,
    f_bandwidth: int,
    density: float,
    window: int,
    rng: np.random.Generator,
    q: float = 1.0,
    r: float = 1.0,
    s0: float = 1.0,
    scramble: bool = False,
) -> GlobalModel:
    """Modelo aleatorio con ||F||_2 = 1 y sensores sobre ventanas solapadas.

    Con ``scramble`` los estados se permutan al azar, de modo que F deja de ser
    bandada y hace falta bandwidth_reduce para recuperar la estructura.
    """

    F = random_banded_dynamics(n, f_bandwidth, density, rng)
    H = window_observations(n, sensors, window, rng)
    if scramble:
        perm = rng.permutation(n)
        F = F[perm][:, perm].tocsr()
        H = H[:, perm]
    model = GlobalModel(
        F=F,
        G=sparse.identity(n, format="csr"),
        Q=q * np.eye(n),
        H=H,
        R=r * np.eye(sensors),
        S0=s0 * np.eye(n),
        sensor_rows=tuple((sid, sid, sid + 1) for sid in range(sensors)),
        meta={
            "kind": "random",
            "f_bandwidth": f_bandwidth,
            "density": density,
            "window": window,
            "scrambled": scramble,
        },
    )
    model.validate()
    return model


def block_observation_model(
    F: sparse.spmatrix | np.ndarray,
    blocks: Sequence[Sequence[int]],
    q: float = 1.0,
    r: float = 1.0,
    s0: float = 1.0,
) -> GlobalModel:
    """Cada sensor observa directamente los estados de su bloque (filas de I)."""

    F = sparse.csr_matrix(F)
    n = F.shape[0]
    rows = []
    sensor_rows = []
    cursor = 0
    for sid, block in enumerate(blocks):
        for state in block:
            row = np.zeros(n)
            row[state] = 1.0
            rows.append(row)
        sensor_rows.append((sid, cursor, cursor + len(block)))
        cursor += len(block)
    model = GlobalModel(
        F=F,
        G=sparse.identity(n, format="csr"),
        Q=q * np.eye(n),
        H=np.vstack(rows),
        R=r * np.eye(cursor),
        S0=s0 * np.eye(n),
        sensor_rows=tuple(sensor_rows),
        meta={"kind": "blocks", "blocks": [list(map(int, block)) for block in blocks]},
    )
    model.validate()
    return model


def example_five_state_model(coefficients: Dict[str, float] | None = None) -> GlobalModel:
    """Sistema ilustrativo de 5 estados, 2 entradas de ruido y 3 sensores.

    Patron de F: x1<-{x1,x2}, x2<-{x1,x2,x4}, x3<-{x1,x3}, x4<-{x3,x5},
    x5<-{x4,x5}; el ruido u1 entra en x5 y u2 en x3. Los sensores observan
    {x1,x2,x3}, {x2,x3,x4} y {x4,x5}.
    """

    coeffs = {
        "f11": 0.5, "f12": 0.2,
        "f21": 0.1, "f22": 0.6, "f24": 0.15,
        "f31": 0.2, "f33": 0.55,
        "f43": 0.1, "f45": 0.25,
        "f54": 0.3, "f55": 0.4,
        "g51": 1.0, "g32": 1.0,
    }
    coeffs.update(coefficients or {})
    F = np.zeros((5, 5))
    for name, value in coeffs.items():
        if name.startswith("f"):
            F[int(name[1]) - 1, int(name[2]) - 1] = value
    G = np.zeros((5, 2))
    G[4, 0] = coeffs["g51"]
    G[2, 1] = coeffs["g32"]
    H = np.array(
        [
            [1.0, 1.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 1.0],
        ]
    )
    model = GlobalModel(
        F=sparse.csr_matrix(F),
        G=sparse.csr_matrix(G),
        Q=np.eye(2),
        H=H,
        R=np.eye(3),
        S0=np.eye(5),
        sensor_rows=((0, 0, 1), (1, 1, 2), (2, 2, 3)),
        meta={"kind": "example5", "coefficients": coeffs},
    )
    model.validate()
    return model


# -----------------------------------------------------------------------------
# Simulacion
# -----------------------------------------------------------------------------

def sampling_factor(matrix: np.ndarray) -> np.ndarray:
    """Factor A con A A^T = matrix; Cholesky o, si falla, autovalores recortados en 0."""

    if matrix.size == 0:
        return np.zeros_like(matrix)
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        values, vectors = np.linalg.eigh(matrix)
        values = np.where(values > PSD_CLIP, values, 0.0)
        return vectors * np.sqrt(values)


def simulate(
    model: GlobalModel, k_max: int, seed: int, x0: np.ndarray | None = None
) -> Trajectory:
    """Genera x_0..x_{k_max} y y_0..y_{k_max}; funcion pura de (model, k_max, seed).

    Args:
        model: Modelo global.
        k_max: Ultimo instante simulado.
        seed: Semilla del generador.
        x0: Estado inicial fijo; si falta se muestrea de N(0, S0).

    Returns:
        Trajectory con k_max + 1 estados y observaciones.
    """

    model.validate(strict_pd=False)
    rng = np.random.default_rng(seed)
    S0_f = sampling_factor(model.S0)
    Q_f = sampling_factor(model.Q)
    R_f = sampling_factor(model.R)

    n, p = model.n, model.p
    states = np.empty((k_max + 1, n))
    observations = np.empty((k_max + 1, p))
    x = S0_f @ rng.standard_normal(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    for k in range(k_max + 1):
        states[k] = x
        observations[k] = model.H @ x + R_f @ rng.standard_normal(p)
        x = model.F @ x + model.G @ (Q_f @ rng.standard_normal(model.noise_dim))
    return Trajectory(states=states, observations=observations, seed=seed)


def sample_initial_states(model: GlobalModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """Matriz (count, n) de muestras de x_0 ~ N(0, S0)."""

    factor = sampling_factor(model.S0)
    return rng.standard_normal((count, model.n)) @ factor.T


# -----------------------------------------------------------------------------
# Ancho de banda
# -----------------------------------------------------------------------------

def bandwidth(matrix: sparse.spmatrix | np.ndarray) -> int:
    """Maximo |i - j| sobre las entradas no nulas."""

    coo = sparse.coo_matrix(matrix)
    mask = coo.data != 0
    if not mask.any():
        return 0
    return int(np.abs(coo.row[mask] - coo.col[mask]).max())


def permute_model(model: GlobalModel, perm: np.ndarray) -> GlobalModel:
    """Modelo con estados reordenados: x' = x[perm]."""

    F = model.F[perm][:, perm].tocsr()
    return GlobalModel(
        F=F,
        G=model.G[perm].tocsr(),
        Q=model.Q,
        H=model.H[:, perm],
        R=model.R,
        S0=model.S0[np.ix_(perm, perm)],
        sensor_rows=model.sensor_rows,
        meta={**model.meta, "permutation": [int(i) for i in perm]},
    )


def bandwidth_reduce(model: GlobalModel) -> Tuple[GlobalModel, np.ndarray]:
    """Reordena los estados con Cuthill-McKee inverso sobre el patron simetrizado de F.

    Si la reordenacion no reduce el ancho de banda se devuelve la identidad.

    Returns:
        (modelo permutado, permutacion) con x_permutado = x[perm].
    """

    pattern = sparse.csr_matrix(abs(model.F) + abs(model.F).T)
    pattern.data[:] = 1.0
    perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True), dtype=int)
    if bandwidth(model.F[perm][:, perm]) >= bandwidth(model.F):
        perm = np.arange(model.n)
    return permute_model(model, perm), perm


def restore_order(x_permuted: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Devuelve al orden original un vector (o filas de matriz) permutado."""

    x = np.empty_like(x_permuted)
    x[perm] = x_permuted
    return x


# -----------------------------------------------------------------------------
# Persistencia
# -----------------------------------------------------------------------------

def _triples(matrix: sparse.spmatrix | np.ndarray) -> list:
    coo = sparse.coo_matrix(matrix)
    mask = coo.data != 0
    rows, cols, vals = coo.row[mask], coo.col[mask], coo.data[mask]
    order = np.lexsort((cols, rows))
    return [[int(rows[i]), int(cols[i]), float(vals[i])] for i in order]


def _from_triples(triples: list, shape: Tuple[int, int]) -> sparse.csr_matrix:
    if not triples:
        return sparse.csr_matrix(shape)
    rows, cols, vals = zip(*triples)
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)


def model_to_dict(model: GlobalModel) -> Dict[str, Any]:
    return {
        "n": model.n,
        "noise_dim": model.noise_dim,
        "p": model.p,
        "F": _triples(model.F),
        "G": _triples(model.G),
        "H": _triples(model.H),
        "Q": model.Q.tolist(),
        "R": model.R.tolist(),
        "S0": model.S0.tolist(),
        "sensor_rows": [list(row) for row in model.sensor_rows],
        "meta": model.meta,
    }


def model_from_dict(payload: Dict[str, Any]) -> GlobalModel:
    n, j, p = payload["n"], payload["noise_dim"], payload["p"]
    model = GlobalModel(
        F=_from_triples(payload["F"], (n, n)),
        G=_from_triples(payload["G"], (n, j)),
        Q=np.array(payload["Q"], dtype=float).reshape(j, j),
        H=_from_triples(payload["H"], (p, n)).toarray(),
        R=np.array(payload["R"], dtype=float).reshape(p, p),
        S0=np.array(payload["S0"], dtype=float).reshape(n, n),
        sensor_rows=tuple(tuple(int(v) for v in row) for row in payload["sensor_rows"]),
        meta=payload.get("meta", {}),
    )
    model.validate(strict_pd=False)
    return model


def save_model(model: GlobalModel, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_model(path: str | Path) -> GlobalModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
