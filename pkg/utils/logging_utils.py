"""Logging del filtro distribuido con contexto de sensor y fase.

Cada registro lleva el sensor que lo emite (o ``global`` para mensajes de la
red completa) y la fase del ciclo del filtro: fusion, dici, prediccion, lif,
red, descomposicion o cli. Todo va a ``dkf.log`` con rotacion diaria y a la
consola.
"""

from __future__ import annotations

import logging
import os
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path

GLOBAL_SENSOR = "global"
GENERAL_PHASE = "general"
LOG_FORMAT = "%(asctime)s | %(levelname)s | Sensor: %(sensor)s | Fase: %(fase)s | %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
DEFAULT_BACKUPS = 30


class _ContextFilter(logging.Filter):
    """Rellena sensor y fase en registros emitidos sin adaptador (p. ej. por librerias)."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "sensor"):
            record.sensor = GLOBAL_SENSOR
        if not hasattr(record, "fase"):
            record.fase = GENERAL_PHASE
        return True


def _level_from_env() -> int:
    return getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO)


def _backups_from_env() -> int:
    raw = os.getenv("LOG_BACKUP_COUNT")
    return int(raw) if raw and raw.isdigit() else DEFAULT_BACKUPS


def _with_context(handler: logging.Handler, level: int) -> logging.Handler:
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    handler.addFilter(_ContextFilter())
    return handler


def setup_logging(log_dir: str | Path = "logs", log_file: str = "dkf.log") -> Path:
    """Prepara el log de las ejecuciones del filtro: fichero diario y consola.

    ``LOG_DIR`` sustituye a ``log_dir``; ``LOG_LEVEL`` y ``LOG_BACKUP_COUNT``
    fijan el nivel y los dias que se conservan. Si el logger raiz ya tiene
    manejadores no se anade ninguno.

    Returns:
        Ruta de ``dkf.log``.
    """

    full_path = Path(os.getenv("LOG_DIR") or log_dir) / log_file
    root = logging.getLogger()
    if root.handlers:
        return full_path

    full_path.parent.mkdir(parents=True, exist_ok=True)
    level = _level_from_env()
    daily = TimedRotatingFileHandler(
        full_path, when="midnight", backupCount=_backups_from_env(), encoding="utf-8"
    )
    daily.suffix = "%Y-%m-%d"
    root.setLevel(level)
    root.addHandler(_with_context(daily, level))
    root.addHandler(_with_context(logging.StreamHandler(), level))
    return full_path


def get_logger(
    sensor: int | str | None = None, fase: str | None = None, name: str = "dkf"
) -> logging.LoggerAdapter:
    """Logger de un sensor en una fase del ciclo.

    Args:
        sensor: Id del sensor; None para mensajes de toda la red.
        fase: Fase del ciclo (fusion, dici, prediccion, ...).
        name: Logger base.
    """

    extra = {
        "sensor": GLOBAL_SENSOR if sensor is None else str(sensor),
        "fase": fase or GENERAL_PHASE,
    }
    return logging.LoggerAdapter(logging.getLogger(name), extra)
