"""Maquinaria de bandas L.

Una BandProfile guarda las entradas |i - j| <= L de una matriz simetrica en el
formato "upper" de LAPACK: ``data[L + i - j, j] = s_ij`` para i <= j.

Teorema de inversion L-bandada: si S es la covarianza cuya inversa Z es
L-bandada, Z se reconstruye solo con la banda de S como suma de inversas de
ventanas principales (L+1)x(L+1) menos las inversas de sus solapes LxL.

Colapso: las entradas fuera de banda de S quedan determinadas por la banda
(estructura de Markov de orden L): para i < j, j - i > L,
s_ij = S[i, K] S[K, K]^{-1} S[K, j] con K = {j-L, ..., j-1}.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Tuple

import numpy as np
from scipy import linalg

from dkf.errors import BandError, CollapseError, NotPositiveDefiniteError, SingularWindowError
from utils.export import read_csv, write_csv

# Tolerancias compartidas por modulos y pruebas
RECONSTRUCTION_RTOL = 1e-9
COLLAPSE_RTOL = 1e-8
SYMMETRY_ATOL = 1e-10
SPD_EIG_FLOOR = 0.0


@dataclass(frozen=True, eq=False)
class BandProfile:
    """Entradas simetricas |i - j| <= L de una matriz n x n.

    ``kind`` etiqueta el contenido: "covariance" (banda de S) o "information"
    (Z L-bandada).
    """

    n: int
    L: int
    data: np.ndarray
    kind: str = "covariance"

    def __post_init__(self) -> None:
        if not 0 <= self.L < self.n:
            raise BandError(f"Se requiere 0 <= L < n (L={self.L}, n={self.n})")
        if self.data.shape != (self.L + 1, self.n):
            raise BandError(f"Forma de banda {self.data.shape} != {(self.L + 1, self.n)}")
        self.data.setflags(write=False)

    def get(self, i: int, j: int) -> float:
        if abs(i - j) > self.L:
            raise BandError(f"La entrada ({i}, {j}) esta fuera de la banda L={self.L}")
        lo, hi = min(i, j), max(i, j)
        return float(self.data[self.L + lo - hi, hi])

    def diagonal(self, offset: int = 0) -> np.ndarray:
        """Diagonal superior ``offset`` (longitud n - offset)."""

        return np.array(self.data[self.L - offset, offset:])

    def to_dense(self) -> np.ndarray:
        """Matriz densa simetrica con ceros fuera de la banda."""

        return band_to_dense(self.data, self.n, self.L)

    def window(self, start: int, size: int) -> np.ndarray:
        """Submatriz principal densa S[start:start+size, start:start+size], size <= L + 1."""

        if size > self.L + 1:
            raise BandError(f"Ventana de tamano {size} > L + 1 = {self.L + 1}")
        block = np.empty((size, size))
        for d in range(size):
            values = self.data[self.L - d, start + d : start + size]
            idx = np.arange(size - d)
            block[idx, idx + d] = values
            block[idx + d, idx] = values
        return block

    def to_triples(self) -> list[tuple[int, int, float]]:
        triples = []
        for i in range(self.n):
            for j in range(i, min(self.n, i + self.L + 1)):
                triples.append((i, j, float(self.data[self.L + i - j, j])))
        return triples

    def to_csv(self, path: str | Path) -> Path:
        """CSV de triples (i, j, value) con i <= j dentro de la banda."""

        return write_csv(path, ["i", "j", "value"], self.to_triples(), {"n": self.n, "L": self.L, "kind": self.kind})

    @classmethod
    def from_csv(cls, path: str | Path) -> "BandProfile":
        metadata, _, rows = read_csv(path)
        return from_triples(
            int(metadata["n"]),
            int(metadata["L"]),
            ((int(i), int(j), float(v)) for i, j, v in rows),
            kind=metadata.get("kind", "covariance"),
        )


def from_triples(
    n: int, L: int, triples: Iterable[Tuple[int, int, float]], kind: str = "covariance"
) -> BandProfile:
    data = np.zeros((L + 1, n))
    for i, j, value in triples:
        lo, hi = min(i, j), max(i, j)
        if hi - lo > L:
            raise BandError(f"Triple ({i}, {j}) fuera de la banda L={L}")
        data[L + lo - hi, hi] = value
    return BandProfile(n=n, L=L, data=data, kind=kind)


def band_to_dense(data: np.ndarray, n: int, L: int) -> np.ndarray:
    dense = np.zeros((n, n))
    for d in range(L + 1):
        idx = np.arange(n - d)
        dense[idx, idx + d] = data[L - d, d:]
        dense[idx + d, idx] = data[L - d, d:]
    return dense


def band_project(A: np.ndarray, L: int, kind: str = "covariance") -> BandProfile:
    """Copia las entradas |i - j| <= L de una matriz simetrica.

    Raises:
        BandError: Si L >= n o A no es simetrica.
    """

    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise BandError(f"Se esperaba una matriz cuadrada, forma {A.shape}")
    if L >= n or L < 0:
        raise BandError(f"Se requiere 0 <= L < n (L={L}, n={n})")
    if not np.allclose(A, A.T, atol=SYMMETRY_ATOL, rtol=1e-12):
        raise BandError("La matriz a proyectar no es simetrica")
    data = np.zeros((L + 1, n))
    for d in range(L + 1):
        data[L - d, d:] = np.diagonal(A, d)
    return BandProfile(n=n, L=L, data=data, kind=kind)


def spd_inverse(block: np.ndarray) -> np.ndarray:
    """Inversa de una matriz SPD pequena por Cholesky (lanza LinAlgError si falla)."""

    factor = linalg.cho_factor(block, lower=True, check_finite=False)
    inverse = linalg.cho_solve(factor, np.eye(block.shape[0]), check_finite=False)
    return 0.5 * (inverse + inverse.T)


def lband_invert_segment(S_seg: np.ndarray, start: int, n: int, L: int) -> np.ndarray:
    """Teorema de inversion L-bandada restringido a un segmento contiguo de indices.

    Solo se acumulan las ventanas contenidas en el segmento [start, start + m).
    Las entradas (a, b) cuyas ventanas caen todas dentro del segmento son
    exactas; en particular, toda la banda si el segmento es 0..n-1. Las ventanas
    se suman en orden creciente de indice, asi que dos llamadas con los mismos
    valores producen resultados identicos bit a bit.

    Args:
        S_seg: Submatriz densa de S sobre el segmento (solo se lee la banda).
        start: Indice global del primer elemento del segmento.
        n: Dimension global.
        L: Semiancho de banda.

    Returns:
        Matriz densa m x m con la contribucion de las ventanas del segmento.

    Raises:
        SingularWindowError: Con el indice global de la ventana que falla.
    """

    m = S_seg.shape[0]
    Z = np.zeros((m, m))
    if L == 0:
        diag = np.diagonal(S_seg)
        if np.any(diag <= 0):
            bad = int(np.argmax(diag <= 0))
            raise SingularWindowError(start + bad, 1)
        np.fill_diagonal(Z, 1.0 / diag)
        return Z

    first = start
    last = min(start + m - (L + 1), n - L - 1)
    for i in range(first, last + 1):
        local = i - start
        block = S_seg[local : local + L + 1, local : local + L + 1]
        try:
            Z[local : local + L + 1, local : local + L + 1] += spd_inverse(block)
        except linalg.LinAlgError as exc:
            raise SingularWindowError(i, L + 1) from exc
        if i > 0:
            inner = S_seg[local : local + L, local : local + L]
            try:
                Z[local : local + L, local : local + L] -= spd_inverse(inner)
            except linalg.LinAlgError as exc:
                raise SingularWindowError(i, L) from exc
    return Z


def lband_invert(band: BandProfile) -> BandProfile:
    """Z L-bandada a partir de la banda de S (teorema de inversion L-bandada).

    Cada bloque de salida usa solo ventanas vecinas de la banda, nunca S completa.

    Raises:
        SingularWindowError: Si una ventana no es definida positiva.
    """

    n, L = band.n, band.L
    if L == 0:
        return BandProfile(n=n, L=0, data=_reciprocal(band.data, n), kind="information")
    Z = lband_invert_segment(band.to_dense(), 0, n, L)
    return band_project(Z, L, kind="information")


def _reciprocal(data: np.ndarray, n: int) -> np.ndarray:
    diag = data[0]
    if np.any(diag <= 0):
        raise SingularWindowError(int(np.argmax(diag <= 0)), 1)
    return (1.0 / diag).reshape(1, n)


# -----------------------------------------------------------------------------
# Colapso
# -----------------------------------------------------------------------------

def markov_weights(S_seg: np.ndarray, L: int, strict: bool = True) -> Tuple[np.ndarray, int]:
    """Pesos w_j = S[K,K]^{-1} S[K,j], K = {j-L..j-1}, para j = L..m-1 del segmento.

    Returns:
        (W, fallos) con W de forma (m, L) (filas j < L a cero) y el numero de
        pivotes no definidos positivos resueltos por minimos cuadrados cuando
        ``strict`` es False.

    Raises:
        CollapseError: Con el indice local del primer pivote no SPD si strict.
    """

    m = S_seg.shape[0]
    W = np.zeros((m, L))
    if L == 0 or m <= L:
        return W, 0
    cols = np.arange(L, m)
    K = cols[:, None] - L + np.arange(L)
    blocks = S_seg[K[:, :, None], K[:, None, :]]
    rhs = S_seg[K, cols[:, None]]
    failures = 0
    try:
        np.linalg.cholesky(blocks)
        W[L:] = np.linalg.solve(blocks, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for pos, j in enumerate(cols):
            try:
                factor = linalg.cho_factor(blocks[pos], lower=True, check_finite=False)
                W[j] = linalg.cho_solve(factor, rhs[pos], check_finite=False)
            except linalg.LinAlgError:
                if strict:
                    raise CollapseError(int(j)) from None
                failures += 1
                W[j] = linalg.lstsq(blocks[pos], rhs[pos])[0]
    return W, failures


def collapse_segment(
    S_seg: np.ndarray, L: int, max_offset: int | None = None, strict: bool = True
) -> int:
    """Rellena in situ las entradas fuera de banda de un segmento contiguo.

    Se recorren los desplazamientos d = L+1, L+2, ... en orden creciente, de
    modo que cada s_ij usa solo entradas ya disponibles entre i y j.

    Args:
        S_seg: Matriz densa simetrica con la banda valida; se modifica.
        L: Semiancho de banda.
        max_offset: Ultimo desplazamiento a rellenar (por defecto m - 1).
        strict: Lanza CollapseError ante pivotes no SPD.

    Returns:
        Numero de pivotes resueltos por minimos cuadrados.
    """

    m = S_seg.shape[0]
    top = m - 1 if max_offset is None else min(max_offset, m - 1)
    if top <= L:
        return 0
    if L == 0:
        for d in range(1, top + 1):
            idx = np.arange(m - d)
            S_seg[idx, idx + d] = 0.0
            S_seg[idx + d, idx] = 0.0
        return 0
    W, failures = markov_weights(S_seg, L, strict=strict)
    lags = np.arange(L)
    for d in range(L + 1, top + 1):
        i = np.arange(m - d)
        j = i + d
        K = j[:, None] - L + lags
        values = np.einsum("ab,ab->a", S_seg[i[:, None], K], W[j])
        S_seg[i, j] = values
        S_seg[j, i] = values
    return failures


def complete_band(band: BandProfile, max_offset: int | None = None, strict: bool = True) -> np.ndarray:
    """Matriz densa cuya banda es ``band`` y cuya inversa es L-bandada."""

    dense = band.to_dense()
    collapse_segment(dense, band.L, max_offset=max_offset, strict=strict)
    return dense


def collapse_offband(band: BandProfile, i: int, j: int) -> float:
    """Entrada fuera de banda s_ij consistente con una inversa L-bandada.

    Solo usa la banda entre min(i, j) y max(i, j).

    Raises:
        BandError: Si (i, j) esta dentro de la banda.
        CollapseError: Si un pivote no es definido positivo.
    """

    lo, hi = min(i, j), max(i, j)
    if hi - lo <= band.L:
        raise BandError(f"La entrada ({i}, {j}) esta dentro de la banda L={band.L}")
    L = band.L
    seg = np.zeros((hi - lo + 1, hi - lo + 1))
    for d in range(L + 1):
        idx = np.arange(hi - lo + 1 - d)
        values = band.data[L - d, lo + d : hi + 1]
        seg[idx, idx + d] = values
        seg[idx + d, idx] = values
    try:
        collapse_segment(seg, L)
    except CollapseError as exc:
        raise CollapseError(lo + exc.index) from None
    return float(seg[0, -1])


# -----------------------------------------------------------------------------
# Aproximaciones y diagnosticos
# -----------------------------------------------------------------------------

def information_width(I: np.ndarray, index: np.ndarray | None = None) -> int:
    """Mayor |a - b| entre indices globales con I[a, b] != 0.

    ``index`` da los indices globales de filas y columnas cuando I es una
    matriz local sobre un conjunto de corte. Una matriz nula tiene ancho 0.
    """

    I = np.asarray(I)
    index = np.arange(I.shape[0]) if index is None else np.asarray(index)
    rows, cols = np.nonzero(I)
    return int(np.max(np.abs(index[rows] - index[cols]), initial=0))


class DivergenceReport(NamedTuple):
    """Perdida de informacion entre la matriz exacta y su aproximacion."""

    value: float
    bound: float
    gaussian_kl: float


def _spd_eigh(Z: np.ndarray, name: str) -> Tuple[np.ndarray, np.ndarray]:
    if not np.allclose(Z, Z.T, atol=SYMMETRY_ATOL, rtol=1e-12):
        raise NotPositiveDefiniteError(f"{name} no es simetrica")
    values, vectors = np.linalg.eigh(0.5 * (Z + Z.T))
    if values.min() <= SPD_EIG_FLOOR:
        raise NotPositiveDefiniteError(f"{name} no es definida positiva (lambda_min={values.min():.3e})")
    return values, vectors


def kl_divergence(Z_exact: np.ndarray, Z_approx: np.ndarray) -> DivergenceReport:
    """Divergencia entre la matriz de informacion exacta y su aproximacion.

    ``value`` = 1/2 ||Z_exact^{-1/2} (Z_approx - Z_exact) Z_approx^{-1/2}||_F^2
    con raices cuadradas simetricas; ``bound`` es la cota por autovalores
    1/2 (sum lambda(Z_approx)^{-1/2})^2 (sum lambda(Z_exact)^{-1/2})^2 ||Z_approx - Z_exact||_F^2;
    ``gaussian_kl`` es KL(N(0, Z_exact^{-1}) || N(0, Z_approx^{-1})).

    Raises:
        NotPositiveDefiniteError: Si alguna entrada no es SPD.
    """

    Z_exact = np.asarray(Z_exact, dtype=float)
    Z_approx = np.asarray(Z_approx, dtype=float)
    if Z_exact.shape != Z_approx.shape:
        raise NotPositiveDefiniteError(f"Dimensiones distintas: {Z_exact.shape} vs {Z_approx.shape}")
    lam_e, vec_e = _spd_eigh(Z_exact, "Z_exact")
    lam_a, vec_a = _spd_eigh(Z_approx, "Z_approx")
    root_e = (vec_e / np.sqrt(lam_e)) @ vec_e.T
    root_a = (vec_a / np.sqrt(lam_a)) @ vec_a.T
    diff = Z_approx - Z_exact
    value = 0.5 * np.linalg.norm(root_e @ diff @ root_a, "fro") ** 2
    bound = 0.5 * np.sum(lam_a ** -0.5) ** 2 * np.sum(lam_e ** -0.5) ** 2 * np.linalg.norm(diff, "fro") ** 2

    n = Z_exact.shape[0]
    trace_term = np.trace((vec_e / lam_e) @ vec_e.T @ Z_approx)
    logdet = np.sum(np.log(lam_e)) - np.sum(np.log(lam_a))
    gaussian_kl = 0.5 * (trace_term - n + logdet)
    return DivergenceReport(float(value), float(bound), float(max(gaussian_kl, 0.0)))


def random_banded_spd(
    n: int, L: int, rng: np.random.Generator, spread: float = 0.5
) -> np.ndarray:
    """Z = C C^T con C triangular inferior L-bandada y diagonal en [1, 2].

    El resultado es SPD, exactamente L-bandado y bien condicionado para
    ``spread`` moderado.
    """

    C = np.diag(rng.uniform(1.0, 2.0, n))
    scale = spread / np.sqrt(max(L, 1))
    for d in range(1, L + 1):
        idx = np.arange(n - d)
        C[idx + d, idx] = scale * rng.standard_normal(n - d)
    return C @ C.T


def random_spd(n: int, rng: np.random.Generator, high: float = 10.0) -> np.ndarray:
    """SPD aleatoria: autovectores de X + X^T gaussiana y autovalores Uniform(0, high]."""

    X = rng.standard_normal((n, n))
    _, V = np.linalg.eigh(X + X.T)
    values = high - rng.uniform(0.0, high, n)
    return (V * values) @ V.T
