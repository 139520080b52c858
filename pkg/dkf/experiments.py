"""Experimentos Monte Carlo: curvas de traza, contraccion, cota de error y barrido DICI.

Cada experimento escribe en su carpeta de ejecucion (``output_dir/<nombre>_<hash>``)
los CSV con fila de metadatos, ``summary.xlsx`` y ``config.json``. Los ensayos
se agrupan como columnas de una misma estimacion: la recursion de covarianza
no depende de los datos y se calcula una sola vez.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from config import ExperimentConfig, config_hash
from dkf.decomposition import build_fusion_topology, decompose, export_decomposition
from dkf.dici import JorConfig, contraction_trial, error_bound_experiment
from dkf.errors import (
    CollapseError,
    ConfigError,
    FilterDivergenceError,
    NotPositiveDefiniteError,
    SingularWindowError,
)
from dkf.filters import (
    LifConfig,
    LifStepReport,
    LocalFilterBank,
    check_trace,
    cif_filter,
    cif_init,
    cif_predict,
    clbif_filter,
    clbif_init,
    clbif_predict,
    filter_band,
    observation_information,
    riccati_steady_trace,
)
from dkf.model_core import (
    GlobalModel,
    bandwidth,
    bandwidth_reduce,
    build_elliptic_model,
    build_random_model,
    save_model,
    simulate,
)
from dkf.simulator import CommNetwork, payload_bound
from utils.export import write_csv, write_json, write_summary_xlsx
from utils.logging_utils import get_logger
from utils.rng import model_rng, trial_rng, trial_seeds

FILTER_KINDS = ("cif", "clbif", "lif")
STEADY_FRACTION = 0.2
DIVERGENCE_FACTOR = 10.0

# Errores numericos que en el modo desacoplado indican que el filtro ha divergido.
DIVERGENCE_ERRORS = (FilterDivergenceError, NotPositiveDefiniteError, SingularWindowError, CollapseError)


@dataclass
class RunArtifacts:
    """Carpeta de la ejecucion, ficheros escritos y resumen numerico."""

    run_dir: Path
    files: Dict[str, Path] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)


@dataclass
class FilterCurve:
    """Traza de S_{k|k} y error cuadratico medio por instante de un filtro."""

    kind: str
    L: int | None
    traces: np.ndarray
    predicted: np.ndarray
    mse: np.ndarray
    reports: List[LifStepReport] = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def steady_trace(self) -> float:
        return steady_value(self.traces)

    def exceeds(self, reference: float, factor: float = DIVERGENCE_FACTOR) -> bool:
        """True si diverge o si la traza supera ``factor`` veces la referencia."""

        finite = self.traces[np.isfinite(self.traces)]
        return self.diverged_at is not None or bool(finite.size and finite.max() > factor * reference)


@dataclass(frozen=True, eq=False)
class TrialData:
    """Estados y observaciones de todos los ensayos: ejes (k, dimension, ensayo)."""

    states: np.ndarray
    observations: np.ndarray
    seeds: Tuple[int, ...]

    @property
    def trials(self) -> int:
        return self.states.shape[2]


def steady_value(curve: np.ndarray, fraction: float = STEADY_FRACTION) -> float:
    """Media del ultimo ``fraction`` de la curva (al menos un punto)."""

    curve = np.asarray(curve, dtype=float)
    tail = max(1, int(round(fraction * curve.size)))
    return float(np.mean(curve[-tail:]))


# -----------------------------------------------------------------------------
# Modelo, ensayos y carpeta de salida
# -----------------------------------------------------------------------------

def build_model_from_config(cfg: ExperimentConfig) -> Tuple[GlobalModel, np.ndarray]:
    """Modelo aleatorio o eliptico segun ``cfg.model_kind``.

    Returns:
        (modelo, permutacion); la permutacion es la identidad salvo que se pida
        reduccion de ancho de banda.
    """

    if cfg.model_kind == "elliptic":
        model = build_elliptic_model(
            cfg.grid_rows, cfg.grid_cols, cfg.mu, cfg.beta_h, cfg.beta_v, cfg.dt, q=cfg.q, r=cfg.r, s0=cfg.s0
        )
    else:
        model = build_random_model(
            cfg.n,
            cfg.sensors,
            cfg.f_bandwidth,
            cfg.f_density,
            cfg.h_window,
            model_rng(cfg.seed),
            q=cfg.q,
            r=cfg.r,
            s0=cfg.s0,
            scramble=cfg.bandwidth_reduction,
        )
    perm = np.arange(model.n)
    if cfg.bandwidth_reduction:
        before = bandwidth(model.F)
        model, perm = bandwidth_reduce(model)
        get_logger(fase="modelo").info("Ancho de banda de F: %d -> %d", before, bandwidth(model.F))
    return model, perm


def run_directory(cfg: ExperimentConfig, name: str) -> Path:
    """``output_dir/<name>_<hash>``; el nombre no depende de la hora para ser reproducible."""

    out = Path(cfg.output_dir) / f"{name}_{config_hash(cfg)}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_metadata(cfg: ExperimentConfig, **extra: Any) -> Dict[str, Any]:
    metadata = {"config_hash": config_hash(cfg), "seed": cfg.seed, "experiment": cfg.experiment}
    metadata.update(extra)
    return metadata


def _write_summary(
    artifacts: RunArtifacts, cfg: ExperimentConfig, headers: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    artifacts.files["summary"] = write_summary_xlsx(
        artifacts.run_dir / "summary.xlsx", cfg.experiment, headers, rows, widths=[18] * len(headers)
    )
    artifacts.files["config"] = write_json(artifacts.run_dir / "config.json", asdict(cfg))


def simulate_trials(model: GlobalModel, k_max: int, seed: int, trials: int) -> TrialData:
    """Una trayectoria por semilla hija; se apilan como columnas."""

    seeds = tuple(int(child.generate_state(1)[0]) for child in trial_seeds(seed, trials))
    runs = [simulate(model, k_max, trial_seed) for trial_seed in seeds]
    states = np.stack([run.states for run in runs], axis=2)
    observations = np.stack([run.observations for run in runs], axis=2)
    return TrialData(states=states, observations=observations, seeds=seeds)


def _mse(x_hat: np.ndarray, x: np.ndarray) -> float:
    return float(np.mean(np.sum((x_hat - x) ** 2, axis=0)))


# -----------------------------------------------------------------------------
# Curvas de un filtro
# -----------------------------------------------------------------------------

def _central_curve(model: GlobalModel, kind: str, L: int | None, data: TrialData) -> FilterCurve:
    steps = data.observations.shape[0]
    traces = np.full(steps, np.nan)
    predicted = np.full(steps, np.nan)
    mse = np.full(steps, np.nan)
    information = observation_information(model)
    if kind == "cif":
        state = cif_init(model, columns=data.trials)
    else:
        state = clbif_init(model, L, columns=data.trials)
    for k in range(steps):
        y = data.observations[k]
        if kind == "cif":
            filtered = cif_filter(state, model, y, information)
            state = cif_predict(filtered, model)
        else:
            filtered = clbif_filter(state, model, y, L, information)
            state = clbif_predict(filtered, model, L)
        traces[k] = filtered.trace()
        check_trace(k, traces[k])
        predicted[k] = float(np.trace(state.S))
        mse[k] = _mse(filtered.x_hat, data.states[k])
    return FilterCurve(kind, L, traces, predicted, mse)


def local_filter_config(cfg: ExperimentConfig, L: int, budget: int | None = None) -> LifConfig:
    jor = JorConfig(
        gamma=cfg.gamma,
        max_iter=cfg.dici_max_iter,
        tol=cfg.dici_tol,
        patience=cfg.dici_patience,
        strict=cfg.strict,
        budget=budget,
    )
    return LifConfig(
        L=L,
        consensus_tol=cfg.consensus_tol,
        consensus_max_iter=cfg.consensus_max_iter,
        consensus_strict=cfg.strict,
        jor=jor,
    )


def _local_curve(
    model: GlobalModel,
    L: int,
    data: TrialData,
    lif_cfg: LifConfig,
    catch_divergence: bool = False,
) -> Tuple[FilterCurve, CommNetwork]:
    subsystems = decompose(model, filter_band(model, L))
    topology = build_fusion_topology(model, subsystems)
    network = CommNetwork(topology.comm_graph, payload_limit=payload_bound([sub.n_l for sub in subsystems], L))
    bank = LocalFilterBank(model, subsystems, topology, lif_cfg, network=network)
    steps = data.observations.shape[0]
    curve = FilterCurve("lif", L, np.full(steps, np.nan), np.full(steps, np.nan), np.full(steps, np.nan))
    states = bank.initial_states(columns=data.trials)
    logger = get_logger(fase="lif")
    for k in range(steps):
        try:
            filtered, states, report = bank.step(states, data.observations[k])
        except DIVERGENCE_ERRORS as exc:
            if not catch_divergence:
                raise
            curve.diverged_at = k
            logger.info("Filtro local divergente en k=%d: %s", k, exc)
            break
        curve.traces[k] = report.trace_filtered
        curve.predicted[k] = report.trace_predicted
        curve.mse[k] = _mse(bank.assemble_estimates(filtered), data.states[k])
        curve.reports.append(report)
    return curve, network


def filter_curve(
    model: GlobalModel,
    kind: str,
    L: int | None,
    data: TrialData,
    cfg: ExperimentConfig,
) -> FilterCurve:
    """Curva de traza de ``kind`` (cif, clbif o lif) con la banda L dada.

    Raises:
        ConfigError: Si el tipo de filtro no existe.
        FilterDivergenceError: Si la traza deja de ser finita.
    """

    if kind not in FILTER_KINDS:
        raise ConfigError(f"Filtro desconocido: {kind} (opciones: {', '.join(FILTER_KINDS)})")
    if kind == "cif":
        return _central_curve(model, kind, None, data)
    L = min(int(L), model.n - 1)
    if kind == "clbif":
        return _central_curve(model, kind, L, data)
    return _local_curve(model, L, data, local_filter_config(cfg, L))[0]


# -----------------------------------------------------------------------------
# Experimentos
# -----------------------------------------------------------------------------

def run_filter_experiment(
    cfg: ExperimentConfig, kind: str, model: GlobalModel | None = None
) -> RunArtifacts:
    """Traza media de S_{k|k} por instante para cada L de la configuracion.

    Escribe ``traces_<kind>_L<L>.csv`` (k,trace), ``mse_<kind>_L<L>.csv`` y, en
    el LIF, ``diagnostics_lif_L<L>.csv`` con consenso, DICI y mensajes.
    """

    logger = get_logger(fase="experimento")
    if model is None:
        model, _ = build_model_from_config(cfg)
    artifacts = RunArtifacts(run_directory(cfg, f"run_{kind}"))
    data = simulate_trials(model, cfg.k_max, cfg.seed, cfg.trials)
    riccati = riccati_steady_trace(model)
    L_values = [None] if kind == "cif" else sorted({min(L, model.n - 1) for L in cfg.L_values})
    metadata = run_metadata(cfg, filter=kind, trials=cfg.trials, riccati_trace=riccati)

    rows = []
    for L in L_values:
        curve = filter_curve(model, kind, L, data, cfg)
        tag = f"{kind}" if L is None else f"{kind}_L{L}"
        artifacts.files[f"traces_{tag}"] = write_csv(
            artifacts.run_dir / f"traces_{tag}.csv",
            ["k", "trace"],
            enumerate(curve.traces),
            metadata,
        )
        artifacts.files[f"mse_{tag}"] = write_csv(
            artifacts.run_dir / f"mse_{tag}.csv", ["k", "mse"], enumerate(curve.mse), metadata
        )
        if curve.reports:
            artifacts.files[f"diagnostics_{tag}"] = write_csv(
                artifacts.run_dir / f"diagnostics_{tag}.csv",
                ["k", "trace_S_filtered", "trace_S_predicted", "consensus_iters", "dici_iters", "messages"],
                (
                    (r.k, r.trace_filtered, r.trace_predicted, r.consensus_iters, r.dici_iters, r.messages)
                    for r in curve.reports
                ),
                metadata,
            )
        steady = curve.steady_trace
        rows.append((kind, "-" if L is None else L, steady, riccati, steady / riccati, steady_value(curve.mse)))
        logger.info("%s L=%s: traza estacionaria %.4f (Riccati %.4f)", kind, L, steady, riccati)

    headers = ["filter", "L", "steady_trace", "riccati_trace", "ratio", "steady_mse"]
    _write_summary(artifacts, cfg, headers, rows)
    artifacts.summary = {
        "riccati_trace": riccati,
        "steady_traces": {str(row[1]): row[2] for row in rows},
        "steady_mse": {str(row[1]): row[5] for row in rows},
    }
    return artifacts


def contraction_experiment(cfg: ExperimentConfig) -> RunArtifacts:
    """Histograma del factor de contraccion alfa sobre ``contraction_trials`` ensayos."""

    logger = get_logger(fase="contraccion")
    artifacts = RunArtifacts(run_directory(cfg, "exp_contraction"))
    samples = [
        contraction_trial(cfg.contraction_n, trial_rng(cfg.seed, trial), gamma=cfg.gamma)
        for trial in range(cfg.contraction_trials)
    ]
    alphas = np.array([sample.alpha for sample in samples])
    metadata = run_metadata(cfg, gamma=cfg.gamma, n=cfg.contraction_n, trials=cfg.contraction_trials)
    artifacts.files["alpha"] = write_csv(
        artifacts.run_dir / "contraction_alpha.csv",
        ["trial", "alpha", "L", "resamples"],
        ((trial, s.alpha, s.L, s.resamples) for trial, s in enumerate(samples)),
        metadata,
    )
    counts, edges = np.histogram(alphas, bins=cfg.hist_bins)
    artifacts.files["histogram"] = write_csv(
        artifacts.run_dir / "contraction_histogram.csv",
        ["bin_left", "bin_right", "count"],
        zip(edges[:-1], edges[1:], counts),
        metadata,
    )
    artifacts.summary = {
        "max_alpha": float(alphas.max()),
        "min_alpha": float(alphas.min()),
        "mean_alpha": float(alphas.mean()),
        "resamples": int(sum(s.resamples for s in samples)),
    }
    logger.info("alfa en [%.4f, %.4f] sobre %d ensayos", alphas.min(), alphas.max(), alphas.size)
    _write_summary(artifacts, cfg, list(artifacts.summary), [list(artifacts.summary.values())])
    return artifacts


def error_bound_run(cfg: ExperimentConfig) -> RunArtifacts:
    """Diferencias ||E_JOR|| - ||E_DICI|| por iteracion (max, min y media sobre ensayos)."""

    artifacts = RunArtifacts(run_directory(cfg, "exp_error_bound"))
    jor = JorConfig(gamma=cfg.gamma, max_iter=cfg.error_bound_iters, tol=cfg.dici_tol, strict=False)
    stats = error_bound_experiment(
        cfg.error_bound_n, cfg.error_bound_L, cfg.trials, jor, cfg.seed, cfg.error_bound_iters
    )
    metadata = run_metadata(
        cfg, gamma=cfg.gamma, n=cfg.error_bound_n, L=cfg.error_bound_L, trials=cfg.trials
    )
    artifacts.files["error_bound"] = write_csv(
        artifacts.run_dir / "error_bound.csv", ["iter", "max_diff", "min_diff", "mean_diff"], stats.rows(), metadata
    )
    artifacts.summary = {
        "min_diff": float(stats.min_diff.min()),
        "max_diff": float(stats.max_diff.max()),
        "pivot_failures": stats.pivot_failures,
    }
    get_logger(fase="cota_error").info(
        "Diferencia minima %.3e, maxima %.3e", artifacts.summary["min_diff"], artifacts.summary["max_diff"]
    )
    _write_summary(artifacts, cfg, ["iter", "max_diff", "min_diff", "mean_diff"], stats.rows())
    return artifacts


def dici_sweep_experiment(
    cfg: ExperimentConfig, model: GlobalModel | None = None, L: int | None = None
) -> RunArtifacts:
    """Traza del LIF con presupuestos fijos de iteraciones DICI por paso.

    Se compara con la inversion directa L-bandada (CLBIF) y con la traza de
    Riccati del CIF. El presupuesto t = 1 es la operacion desacoplada; su
    divergencia se registra en lugar de abortar el experimento.
    """

    logger = get_logger(fase="barrido_dici")
    if model is None:
        model, _ = build_model_from_config(cfg)
    L = min(max(cfg.L_values) if L is None else L, model.n - 1)
    artifacts = RunArtifacts(run_directory(cfg, "exp_dici_sweep"))
    data = simulate_trials(model, cfg.k_max, cfg.seed, cfg.trials)
    riccati = riccati_steady_trace(model)
    direct = _central_curve(model, "clbif", L, data)

    curves: Dict[int, FilterCurve] = {}
    for budget in cfg.dici_budgets:
        curve, _ = _local_curve(
            model, L, data, local_filter_config(cfg, L, budget=budget), catch_divergence=True
        )
        curves[budget] = curve
        logger.info(
            "t=%d: traza estacionaria %.4f%s",
            budget,
            curve.steady_trace,
            "" if curve.diverged_at is None else f" (diverge en k={curve.diverged_at})",
        )

    metadata = run_metadata(cfg, gamma=cfg.gamma, L=L, trials=cfg.trials, riccati_trace=riccati)
    header = ["k"] + [f"t_{budget}" for budget in curves] + ["direct", "riccati"]
    artifacts.files["sweep"] = write_csv(
        artifacts.run_dir / "dici_sweep.csv",
        header,
        (
            [k] + [curve.traces[k] for curve in curves.values()] + [direct.traces[k], riccati]
            for k in range(direct.traces.size)
        ),
        metadata,
    )
    rows = [
        (
            budget,
            curve.steady_trace,
            curve.steady_trace / direct.steady_trace,
            curve.diverged_at if curve.diverged_at is not None else "-",
            curve.exceeds(riccati),
        )
        for budget, curve in curves.items()
    ]
    artifacts.files["steady"] = write_csv(
        artifacts.run_dir / "dici_sweep_steady.csv",
        ["budget", "steady_trace", "ratio_direct", "diverged_at", "exceeds_riccati"],
        rows,
        metadata,
    )
    _write_summary(artifacts, cfg, ["budget", "steady_trace", "ratio_direct", "diverged_at", "exceeds_riccati"], rows)
    artifacts.summary = {
        "riccati_trace": riccati,
        "direct_steady_trace": direct.steady_trace,
        "steady_traces": {budget: curve.steady_trace for budget, curve in curves.items()},
        "diverged": {budget: curve.exceeds(riccati) for budget, curve in curves.items()},
    }
    return artifacts


# -----------------------------------------------------------------------------
# Modelo y descomposicion en disco
# -----------------------------------------------------------------------------

def generate_artifacts(cfg: ExperimentConfig) -> RunArtifacts:
    """Modelo JSON, una trayectoria de ejemplo e informe de descomposicion."""

    model, perm = build_model_from_config(cfg)
    artifacts = RunArtifacts(run_directory(cfg, "model"))
    artifacts.files["model"] = save_model(model, artifacts.run_dir / "model.json")
    trajectory = simulate(model, cfg.k_max, cfg.seed)
    states_path = artifacts.run_dir / "states.csv"
    observations_path = artifacts.run_dir / "observations.csv"
    trajectory.to_csv(states_path, observations_path)
    artifacts.files["states"] = states_path
    artifacts.files["observations"] = observations_path
    artifacts.files.update(decomposition_artifacts(model, max(cfg.L_values), artifacts.run_dir).files)
    artifacts.files["config"] = write_json(artifacts.run_dir / "config.json", asdict(cfg))
    artifacts.summary = {
        "n": model.n,
        "sensors": model.N,
        "bandwidth_F": bandwidth(model.F),
        "permuted": bool(np.any(perm != np.arange(model.n))),
    }
    return artifacts


def decomposition_artifacts(model: GlobalModel, L: int, out_dir: str | Path) -> RunArtifacts:
    """``decomposition.json`` y ``fusion_edges.csv`` de los filtros locales con banda L."""

    L = min(L, model.n - 1)
    band = filter_band(model, L)
    subsystems = decompose(model, band)
    topology = build_fusion_topology(model, subsystems)
    report, edges = export_decomposition(subsystems, topology, out_dir)
    return RunArtifacts(
        Path(out_dir),
        {"decomposition": report, "fusion_edges": edges},
        {"L": L, "W": band, "n_l": [sub.n_l for sub in subsystems]},
    )
