"""Funciones de configuracion utilizadas por la CLI y los experimentos."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List

from dkf.errors import ConfigError

try:
    from dotenv import load_dotenv
except ImportError:  # pragma: no cover - paquete opcional
    load_dotenv = None

if load_dotenv:
    load_dotenv()


@dataclass
class ExperimentConfig:
    """Agrupa parametros compartidos por la CLI, el modelo y los experimentos."""

    experiment: str = "run"
    model_kind: str = "random"
    n: int = 100
    sensors: int = 10
    grid_rows: int = 10
    grid_cols: int = 10
    mu: float = -1.0
    beta_h: float = 0.25
    beta_v: float = 0.25
    dt: float = 0.1
    f_bandwidth: int = 20
    f_density: float = 0.3
    h_window: int = 14
    q: float = 1.0
    r: float = 1.0
    s0: float = 1.0
    bandwidth_reduction: bool = False
    L_values: List[int] = field(default_factory=lambda: [1, 2, 5, 10, 15, 20])
    gamma: float = 0.1
    trials: int = 100
    k_max: int = 40
    seed: int = 42
    consensus_tol: float = 1e-5
    consensus_max_iter: int = 500
    dici_tol: float = 1e-5
    dici_max_iter: int = 200
    dici_patience: int = 10
    dici_budgets: List[int] = field(default_factory=lambda: [1, 10, 30, 100, 200])
    contraction_n: int = 100
    contraction_trials: int = 100
    hist_bins: int = 1000
    error_bound_n: int = 50
    error_bound_L: int = 5
    error_bound_iters: int = 300
    trace_factor: float = 0.1
    output_dir: str = "runs"
    strict: bool = False

    @property
    def state_dim(self) -> int:
        """Dimension efectiva del estado segun el tipo de modelo."""

        if self.model_kind == "elliptic":
            return self.grid_rows * self.grid_cols
        return self.n


def _resolve(
    overrides: Dict[str, Any],
    field_name: str,
    env_key: str,
    default: Any,
    caster: Callable[[str], Any] | None = None,
) -> Any:
    """Devuelve el valor correspondiente al campo indicado.

    Precedencia de valores:
    1) overrides (flags de la CLI y pruebas)
    2) variable de entorno
    3) valor por defecto.

    Args:
        overrides: Valores que sobrescriben el entorno.
        field_name: Nombre del campo destino.
        env_key: Variable de entorno a consultar.
        default: Valor por defecto.
        caster: Funcion opcional para convertir el valor.

    Returns:
        Valor resuelto para el campo.
    """

    if field_name in overrides and overrides[field_name] is not None:
        return overrides[field_name]

    env_value = os.getenv(env_key)
    if env_value is not None:
        return caster(env_value) if caster else env_value

    return default


def _to_bool(value: str) -> bool:
    """Convierte cadenas tipo 'true/1/on' en booleanos."""

    return value.strip().lower() in {"1", "true", "yes", "on"}


def _to_int(value: str, default: int) -> int:
    """Convierte el valor recibido en entero o devuelve el valor por defecto.

    Args:
        value: Cadena a convertir.
        default: Valor por defecto si falla la conversion.

    Returns:
        Entero resultante o valor por defecto.
    """

    try:
        return int(value)
    except ValueError:
        return default


def _to_float(value: str, default: float) -> float:
    """Convierte el valor recibido en flotante o devuelve el valor por defecto."""

    try:
        return float(value)
    except ValueError:
        return default


def _to_int_list(value: str, default: List[int]) -> List[int]:
    """Convierte '1,2,5' en [1, 2, 5]; si algun elemento falla devuelve el defecto.

    Args:
        value: Cadena separada por comas.
        default: Lista por defecto si falla la conversion.

    Returns:
        Lista de enteros.
    """

    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        return list(default)


def _int(default: int) -> Callable[[str], int]:
    return lambda value, default=default: _to_int(value, default)


def _float(default: float) -> Callable[[str], float]:
    return lambda value, default=default: _to_float(value, default)


def load_config(overrides: Dict[str, Any] | None = None) -> ExperimentConfig:
    """Construye una instancia de ExperimentConfig lista para los experimentos.

    Se alimenta con variables de entorno ``DKF_*`` (o un ``.env``) y con los
    flags de la CLI, que llegan como overrides.

    Args:
        overrides: Diccionario opcional con valores forzados.

    Returns:
        Instancia de ExperimentConfig con los valores resueltos y validados.

    Raises:
        ConfigError: Si algun valor resuelto no es coherente.
    """

    overrides = overrides or {}
    defaults = ExperimentConfig()

    settings: Dict[str, Any] = {
        "experiment": _resolve(overrides, "experiment", "DKF_EXPERIMENT", defaults.experiment),
        "model_kind": _resolve(overrides, "model_kind", "DKF_MODEL_KIND", defaults.model_kind),
        "output_dir": _resolve(overrides, "output_dir", "DKF_OUTPUT_DIR", defaults.output_dir),
        "strict": _resolve(overrides, "strict", "DKF_STRICT", defaults.strict, caster=_to_bool),
        "bandwidth_reduction": _resolve(
            overrides,
            "bandwidth_reduction",
            "DKF_BANDWIDTH_REDUCTION",
            defaults.bandwidth_reduction,
            caster=_to_bool,
        ),
        "L_values": _resolve(
            overrides,
            "L_values",
            "DKF_L_VALUES",
            defaults.L_values,
            caster=lambda value, default=defaults.L_values: _to_int_list(value, default),
        ),
        "dici_budgets": _resolve(
            overrides,
            "dici_budgets",
            "DKF_DICI_BUDGETS",
            defaults.dici_budgets,
            caster=lambda value, default=defaults.dici_budgets: _to_int_list(value, default),
        ),
    }

    int_fields = (
        "n",
        "sensors",
        "grid_rows",
        "grid_cols",
        "f_bandwidth",
        "h_window",
        "trials",
        "k_max",
        "seed",
        "consensus_max_iter",
        "dici_max_iter",
        "dici_patience",
        "contraction_n",
        "contraction_trials",
        "hist_bins",
        "error_bound_n",
        "error_bound_L",
        "error_bound_iters",
    )
    float_fields = (
        "mu",
        "beta_h",
        "beta_v",
        "dt",
        "f_density",
        "q",
        "r",
        "s0",
        "gamma",
        "consensus_tol",
        "dici_tol",
        "trace_factor",
    )
    for name in int_fields:
        default = getattr(defaults, name)
        settings[name] = _resolve(overrides, name, f"DKF_{name.upper()}", default, caster=_int(default))
    for name in float_fields:
        default = getattr(defaults, name)
        settings[name] = _resolve(overrides, name, f"DKF_{name.upper()}", default, caster=_float(default))

    cfg = ExperimentConfig(**settings)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Comprueba los invariantes de la configuracion.

    Args:
        cfg: Configuracion a revisar.

    Raises:
        ConfigError: Con el primer problema encontrado.
    """

    positives = (
        "sensors",
        "trials",
        "k_max",
        "consensus_max_iter",
        "dici_max_iter",
        "dici_patience",
        "contraction_trials",
        "hist_bins",
        "error_bound_iters",
        "h_window",
    )
    for name in positives:
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"El campo {name} debe ser positivo (valor: {getattr(cfg, name)})")
    if cfg.model_kind not in {"random", "elliptic"}:
        raise ConfigError(f"Tipo de modelo desconocido: {cfg.model_kind}")
    n = cfg.state_dim
    if n <= 1:
        raise ConfigError(f"La dimension del estado debe ser > 1 (valor: {n})")
    if cfg.sensors > n:
        raise ConfigError(f"Hay mas sensores ({cfg.sensors}) que estados ({n})")
    if not cfg.L_values:
        raise ConfigError("L_values no puede estar vacio")
    bad = [value for value in cfg.L_values if value < 0 or value > n]
    if bad:
        raise ConfigError(f"Valores de L fuera de rango [0, {n}]: {bad}")
    if any(budget <= 0 for budget in cfg.dici_budgets):
        raise ConfigError(f"Los presupuestos DICI deben ser positivos: {cfg.dici_budgets}")
    if cfg.gamma <= 0:
        raise ConfigError(f"gamma debe ser > 0 (valor: {cfg.gamma})")
    if cfg.consensus_tol <= 0 or cfg.dici_tol <= 0:
        raise ConfigError("Las tolerancias deben ser > 0")
    if cfg.dt <= 0:
        raise ConfigError(f"dt debe ser > 0 (valor: {cfg.dt})")
    if not 0 < cfg.f_density <= 1:
        raise ConfigError(f"f_density debe estar en (0, 1] (valor: {cfg.f_density})")
    if cfg.error_bound_L >= cfg.error_bound_n:
        raise ConfigError("error_bound_L debe ser menor que error_bound_n")


def config_hash(cfg: ExperimentConfig) -> str:
    """Huella sha256 (12 caracteres) del JSON canonico de la configuracion."""

    canonical = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]
