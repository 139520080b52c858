"""Filtro de Kalman distribuido para sistemas dispersos de gran escala.

Modulos:
    model_core      modelo global, simulacion y reduccion de ancho de banda
    banded_algebra  bandas L, teorema de inversion L-bandada y colapso
    decomposition   conjuntos de corte, submodelos locales y topologia de fusion
    consensus       promediado iterativo para fusionar observaciones
    simulator       red de sensores sincronica con contadores de trafico
    dici            JOR, DICI-OR y experimentos de contraccion / cota de error
    filters         CIF, CLBIF y filtros de informacion locales (LIF)
    experiments     experimentos Monte Carlo usados por la CLI
"""
