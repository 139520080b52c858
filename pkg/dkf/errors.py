"""Excepciones del paquete; todas heredan de DkfError (RuntimeError)."""

from __future__ import annotations


class DkfError(RuntimeError):
    """Error base del filtro distribuido."""


class ConfigError(DkfError):
    """Configuracion incoherente."""


class ModelError(DkfError):
    """Modelo global invalido (dt, sitios de ruido, particion de H, covarianzas)."""


class BandError(DkfError):
    """Banda L fuera de rango o matriz no simetrica."""


class NotPositiveDefiniteError(DkfError):
    """Se esperaba una matriz simetrica definida positiva."""


class SingularWindowError(DkfError):
    """Una ventana principal de la banda no es invertible por Cholesky."""

    def __init__(self, index: int, size: int) -> None:
        super().__init__(f"Ventana singular en el indice {index} (tamano {size})")
        self.index = index
        self.size = size


class CollapseError(DkfError):
    """Pivote singular durante el colapso de una entrada fuera de banda."""

    def __init__(self, index: int) -> None:
        super().__init__(f"Pivote no definido positivo al colapsar la columna {index}")
        self.index = index


class TopologyError(DkfError):
    """Grafo de comunicacion o subgrafo de fusion no conexo."""

    def __init__(self, message: str, state: int | None = None, sensors: tuple | None = None) -> None:
        super().__init__(message)
        self.state = state
        self.sensors = sensors


class ConsensusError(DkfError):
    """El consenso no alcanzo la tolerancia en max_iter iteraciones."""

    def __init__(self, residual: float, iterations: int) -> None:
        super().__init__(f"Consenso sin converger tras {iterations} iteraciones (residuo {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class JorDivergenceError(DkfError):
    """Radio espectral de P_gamma >= 1: la iteracion JOR no converge."""

    def __init__(self, spectral_radius: float, gamma_hint: float) -> None:
        super().__init__(
            f"Radio espectral {spectral_radius:.6f} >= 1; usa gamma < {gamma_hint:.6g}"
        )
        self.spectral_radius = spectral_radius
        self.gamma_hint = gamma_hint


class DiciConvergenceError(DkfError):
    """La iteracion (JOR o DICI) agoto max_iter sin llegar a tol."""

    def __init__(self, residual: float, iterations: int) -> None:
        super().__init__(f"Sin convergencia tras {iterations} iteraciones (residuo {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class LocalityError(DkfError):
    """La prediccion local necesita entradas fuera del alcance de los vecinos."""

    def __init__(self, sensor: int, span: int, limit: int) -> None:
        super().__init__(
            f"Sensor {sensor}: la envolvente de estados requeridos ocupa {span} indices (limite {limit})"
        )
        self.sensor = sensor
        self.span = span
        self.limit = limit


class RoutingError(DkfError):
    """Mensaje sin ruta en el grafo de comunicacion."""

    def __init__(self, src: int, dst: int) -> None:
        super().__init__(f"No hay ruta de {src} a {dst}")
        self.src = src
        self.dst = dst


class PayloadLimitError(DkfError):
    """Carga util de un mensaje por encima del limite de localidad."""

    def __init__(self, src: int, dst: int, size: int, limit: int) -> None:
        super().__init__(f"Mensaje {src}->{dst} con dimension {size} > limite {limit}")
        self.src = src
        self.dst = dst
        self.size = size
        self.limit = limit


class FilterDivergenceError(DkfError):
    """Traza de covarianza no finita o desbordada."""

    def __init__(self, step: int, trace: float) -> None:
        super().__init__(f"El filtro diverge en el paso {step} (traza {trace:.3e})")
        self.step = step
        self.trace = trace
