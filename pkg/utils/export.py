"""Escritura de resultados: CSV con fila de metadatos, JSON y resumen Excel."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence

import networkx
import numpy
import scipy
from openpyxl import Workbook
from openpyxl.styles import Font
from openpyxl.utils import get_column_letter


def package_versions() -> Dict[str, str]:
    """Versiones de las librerias numericas que afectan a los resultados."""

    return {
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "networkx": networkx.__version__,
    }


def metadata_row(metadata: Mapping[str, Any]) -> str:
    """Serializa los metadatos como ``# clave=valor;...`` con claves ordenadas."""

    merged = dict(metadata)
    for name, version in package_versions().items():
        merged.setdefault(f"version_{name}", version)
    return "# " + ";".join(f"{key}={merged[key]}" for key in sorted(merged))


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    metadata: Mapping[str, Any] | None = None,
) -> Path:
    """Escribe un CSV con una fila opcional de metadatos antes de la cabecera.

    Args:
        path: Ruta de salida; se crean las carpetas intermedias.
        header: Nombres de columna.
        rows: Filas de datos.
        metadata: Claves como hash de configuracion o semilla.

    Returns:
        Ruta escrita.
    """

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        if metadata is not None:
            handle.write(metadata_row(metadata) + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(value) for value in row])
    return out


def read_csv(path: str | Path) -> tuple[Dict[str, str], list[str], list[list[str]]]:
    """Lee un CSV escrito con write_csv: (metadatos, cabecera, filas)."""

    metadata: Dict[str, str] = {}
    with Path(path).open(newline="", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if lines and lines[0].startswith("# "):
        for item in lines[0][2:].split(";"):
            key, _, value = item.partition("=")
            metadata[key] = value
        lines = lines[1:]
    reader = list(csv.reader(lines))
    return metadata, reader[0], reader[1:]


def _format_cell(value: Any) -> Any:
    if isinstance(value, (float, numpy.floating)):
        return repr(float(value))
    if isinstance(value, numpy.integer):
        return int(value)
    return value


def write_json(path: str | Path, payload: Any) -> Path:
    """JSON con claves ordenadas, sangria 2 y salto de linea final."""

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def write_summary_xlsx(
    path: str | Path,
    sheet: str,
    headers: Sequence[str],
    rows: Iterable[Sequence[Any]],
    widths: Sequence[int] | None = None,
) -> Path:
    """Escribe el resumen del experimento en un Excel con cabecera en negrita.

    Args:
        path: Ruta del ``.xlsx``.
        sheet: Titulo de la hoja.
        headers: Cabeceras de columna.
        rows: Filas de datos.
        widths: Anchos de columna opcionales.

    Returns:
        Ruta escrita.
    """

    wb = Workbook()
    ws = wb.active
    ws.title = sheet[:31]

    for col_idx, header in enumerate(headers, start=1):
        cell = ws.cell(row=1, column=col_idx, value=header)
        cell.font = Font(bold=True)

    for row_idx, row in enumerate(rows, start=2):
        for col_idx, value in enumerate(row, start=1):
            if isinstance(value, numpy.generic):
                value = value.item()
            ws.cell(row=row_idx, column=col_idx, value=value)

    # Ajustar anchos
    for col_idx, header in enumerate(headers, start=1):
        width = widths[col_idx - 1] if widths else max(12, len(str(header)) + 2)
        ws.column_dimensions[get_column_letter(col_idx)].width = width

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    wb.save(out)
    return out
