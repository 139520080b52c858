"""Flujos aleatorios reproducibles e independientes para los ensayos Monte Carlo."""

from __future__ import annotations

from typing import List

import numpy as np


def trial_seeds(seed: int, trials: int) -> List[np.random.SeedSequence]:
    """Deriva ``trials`` semillas hijas independientes a partir de la semilla raiz.

    Args:
        seed: Semilla raiz del experimento.
        trials: Numero de ensayos.

    Returns:
        Lista de SeedSequence, una por ensayo.
    """

    return np.random.SeedSequence(seed).spawn(trials)


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Generador del ensayo ``index``; identico al obtenido via trial_seeds."""

    child = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.default_rng(child)


def model_rng(seed: int) -> np.random.Generator:
    # flujo separado de los ensayos para que el modelo no dependa de trials
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2**31,)))
