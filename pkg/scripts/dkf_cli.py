"""CLI del filtro de Kalman distribuido: modelos, descomposicion, filtros y experimentos.

Subcomandos:
  generate         modelo JSON + trayectoria de ejemplo + informe de descomposicion
  decompose        decomposition.json y fusion_edges.csv de un modelo
  run              curvas de traza de cif / clbif / lif
  exp-contraction  histograma del factor de contraccion de DICI-OR
  exp-error-bound  diferencias de error JOR vs DICI-OR por iteracion
  exp-dici-sweep   traza del LIF segun el presupuesto de iteraciones DICI

Los flags sobrescriben las variables DKF_* (o un .env indicado con --env).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Sequence

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from dotenv import load_dotenv  # noqa: E402

from config import ExperimentConfig, load_config  # noqa: E402
from dkf.errors import DkfError  # noqa: E402
from dkf.experiments import (  # noqa: E402
    FILTER_KINDS,
    RunArtifacts,
    build_model_from_config,
    contraction_experiment,
    decomposition_artifacts,
    dici_sweep_experiment,
    error_bound_run,
    generate_artifacts,
    run_directory,
    run_filter_experiment,
)
from dkf.model_core import GlobalModel, load_model  # noqa: E402
from utils.logging_utils import get_logger, setup_logging  # noqa: E402

# flag de la CLI -> campo de ExperimentConfig
FLAG_FIELDS = {
    "model_kind": "model_kind",
    "n": "n",
    "sensors": "sensors",
    "grid_rows": "grid_rows",
    "grid_cols": "grid_cols",
    "L": "L_values",
    "gamma": "gamma",
    "trials": "trials",
    "k_max": "k_max",
    "seed": "seed",
    "budgets": "dici_budgets",
    "dici_tol": "dici_tol",
    "dici_max_iter": "dici_max_iter",
    "consensus_tol": "consensus_tol",
    "contraction_n": "contraction_n",
    "hist_bins": "hist_bins",
    "error_bound_n": "error_bound_n",
    "error_bound_L": "error_bound_L",
    "error_bound_iters": "error_bound_iters",
    "output_dir": "output_dir",
}


def _int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"Lista de enteros no valida: {value}") from exc


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default=None, help="Ruta a fichero .env")
    p.add_argument("--model-kind", choices=["random", "elliptic"], default=None, help="Tipo de modelo")
    p.add_argument("--n", type=int, default=None, help="Dimension del estado (modelo aleatorio)")
    p.add_argument("--sensors", type=int, default=None, help="Numero de sensores N")
    p.add_argument("--grid-rows", type=int, default=None, help="Filas de la malla (modelo eliptico)")
    p.add_argument("--grid-cols", type=int, default=None, help="Columnas de la malla (modelo eliptico)")
    p.add_argument("--L", type=_int_list, default=None, help="Bandas L separadas por comas (ej. 1,2,5)")
    p.add_argument("--gamma", type=float, default=None, help="Parametro de relajacion JOR")
    p.add_argument("--trials", type=int, default=None, help="Ensayos Monte Carlo")
    p.add_argument("--k-max", type=int, default=None, help="Ultimo instante simulado")
    p.add_argument("--seed", type=int, default=None, help="Semilla raiz")
    p.add_argument("--output-dir", default=None, help="Carpeta base de las ejecuciones")
    p.add_argument("--strict", action="store_true", default=None, help="Aborta si consenso o DICI no convergen")
    p.add_argument(
        "--bandwidth-reduction", action="store_true", default=None, help="Reordena estados con Cuthill-McKee inverso"
    )


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Filtro de Kalman distribuido")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Genera el modelo y su descomposicion")
    _add_common(p)

    p = sub.add_parser("decompose", help="Informe de descomposicion de un modelo")
    _add_common(p)
    p.add_argument("--model", default=None, help="Modelo JSON; si falta se genera desde la configuracion")

    p = sub.add_parser("run", help="Curvas de traza de un filtro")
    _add_common(p)
    p.add_argument("--filter", choices=FILTER_KINDS, default="lif", help="Filtro a ejecutar")
    p.add_argument("--model", default=None, help="Modelo JSON; si falta se genera desde la configuracion")
    p.add_argument("--dici-tol", type=float, default=None, help="Tolerancia de DICI-OR")
    p.add_argument("--dici-max-iter", type=int, default=None, help="Maximo de rondas DICI por paso")
    p.add_argument("--consensus-tol", type=float, default=None, help="Tolerancia del consenso")

    p = sub.add_parser("exp-contraction", help="Histograma del factor de contraccion")
    _add_common(p)
    p.add_argument("--contraction-n", type=int, default=None, help="Dimension de las matrices")
    p.add_argument("--contraction-trials", type=int, default=None, help="Ensayos")
    p.add_argument("--hist-bins", type=int, default=None, help="Intervalos del histograma")

    p = sub.add_parser("exp-error-bound", help="Cota de error de DICI-OR frente a JOR")
    _add_common(p)
    p.add_argument("--error-bound-n", type=int, default=None, help="Dimension de Z")
    p.add_argument("--error-bound-L", type=int, default=None, help="Banda de Z")
    p.add_argument("--error-bound-iters", type=int, default=None, help="Iteraciones por ensayo")

    p = sub.add_parser("exp-dici-sweep", help="Traza segun el presupuesto DICI")
    _add_common(p)
    p.add_argument("--model", default=None, help="Modelo JSON; si falta se genera desde la configuracion")
    p.add_argument("--budgets", type=_int_list, default=None, help="Presupuestos t (ej. 1,10,30,100,200)")
    return parser.parse_args(argv)


def overrides_from_args(args: argparse.Namespace, experiment: str) -> Dict[str, Any]:
    """Traduce los flags presentes a overrides de load_config."""

    overrides: Dict[str, Any] = {"experiment": experiment}
    for flag, field_name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "contraction_trials", None) is not None:
        overrides["contraction_trials"] = args.contraction_trials
    if args.strict:
        overrides["strict"] = True
    if args.bandwidth_reduction:
        overrides["bandwidth_reduction"] = True
    return overrides


def _load_model(path: str | None) -> GlobalModel | None:
    if path is None:
        return None
    model_path = Path(path)
    if not model_path.exists():
        raise SystemExit(f"No existe el modelo indicado: {model_path}")
    return load_model(model_path)


def _report(artifacts: RunArtifacts) -> None:
    print(f"📁 Carpeta de salida: {artifacts.run_dir}")
    for name, path in sorted(artifacts.files.items()):
        print(f"   → {name}: {path.name}")
    for key, value in artifacts.summary.items():
        print(f"   · {key}: {value}")


def dispatch(args: argparse.Namespace, cfg: ExperimentConfig) -> RunArtifacts:
    command = args.command
    if command == "generate":
        print("🧩 Generando modelo y descomposicion...")
        return generate_artifacts(cfg)
    if command == "decompose":
        model = _load_model(args.model) or build_model_from_config(cfg)[0]
        print(f"🧩 Descomponiendo modelo n={model.n}, N={model.N}, L={max(cfg.L_values)}...")
        return decomposition_artifacts(model, max(cfg.L_values), run_directory(cfg, "decomposition"))
    if command == "run":
        print(f"📈 Ejecutando {args.filter.upper()} con L={cfg.L_values} y {cfg.trials} ensayos...")
        return run_filter_experiment(cfg, args.filter, model=_load_model(args.model))
    if command == "exp-contraction":
        print(f"🎲 Contraccion: {cfg.contraction_trials} ensayos con n={cfg.contraction_n}...")
        return contraction_experiment(cfg)
    if command == "exp-error-bound":
        print(f"📉 Cota de error: {cfg.trials} ensayos, n={cfg.error_bound_n}, L={cfg.error_bound_L}...")
        return error_bound_run(cfg)
    print(f"🔁 Barrido DICI con presupuestos {cfg.dici_budgets}...")
    return dici_sweep_experiment(cfg, model=_load_model(args.model))


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    if args.env:
        env_path = Path(args.env)
        if not env_path.exists():
            raise SystemExit(f"No existe el fichero .env indicado: {env_path}")
        load_dotenv(dotenv_path=env_path, override=True)
    setup_logging()
    logger = get_logger(fase="cli")

    try:
        cfg = load_config(overrides_from_args(args, args.command))
        artifacts = dispatch(args, cfg)
    except DkfError as exc:
        logger.error("Fallo en %s: %s", args.command, exc)
        raise SystemExit(f"❌ {type(exc).__name__}: {exc}") from exc

    print("✅ Terminado")
    _report(artifacts)
    return 0


if __name__ == "__main__":
    sys.exit(main())
