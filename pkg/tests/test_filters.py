"""Pruebas de los filtros de informacion frente a sus oraculos.

El filtro local con consenso y DICI convergidos reproduce el CLBIF; el CLBIF
con L = n - 1 reproduce el CIF, y el CIF reproduce el filtro de Kalman en
forma de covarianza.
"""

import numpy as np
import pytest
from scipy import sparse

from dkf.decomposition import build_fusion_topology, decompose
from dkf.dici import JorConfig, optimal_gamma
from dkf.errors import BandError, FilterDivergenceError, LocalityError, PayloadLimitError
from dkf.filters import (
    LifConfig,
    LocalFilterBank,
    check_estimate_consensus,
    check_trace,
    cif_filter,
    cif_init,
    cif_predict,
    clbif_filter,
    clbif_init,
    clbif_predict,
    filter_band,
    kalman_init,
    kalman_step,
    lif_filter_step,
    lif_fuse,
    lif_prediction_step,
    observation_information,
    observation_width,
    riccati_steady_state,
    riccati_steady_trace,
)
from dkf.model_core import GlobalModel, block_observation_model, build_random_model, simulate
from dkf.simulator import CommNetwork

STEPS = 30


def converged_config(L, gamma=0.9):
    return LifConfig(
        L=L,
        consensus_tol=1e-12,
        consensus_max_iter=20000,
        jor=JorConfig(gamma=gamma, max_iter=20000, tol=1e-12, strict=False),
    )


def stable_gamma(model, L, steps=STEPS):
    """Paso JOR que contrae para todas las Z_{k|k} del CLBIF (no dependen de los datos)."""

    information = observation_information(model)
    state = clbif_init(model, L)
    gammas = []
    for _ in range(steps):
        filtered = clbif_filter(state, model, np.zeros(model.p), L, information)
        gammas.append(optimal_gamma(filtered.Z))
        state = clbif_predict(filtered, model, L)
    return min(gammas)


def clbif_steady_trace(model, L, steps=200):
    information = observation_information(model)
    state = clbif_init(model, L)
    for _ in range(steps):
        filtered = clbif_filter(state, model, np.zeros(model.p), L, information)
        state = clbif_predict(filtered, model, L)
    return filtered.trace()


def local_bank(model, cfg, network=None):
    subsystems = decompose(model, filter_band(model, cfg.L))
    topology = build_fusion_topology(model, subsystems)
    return LocalFilterBank(model, subsystems, topology, cfg, network=network), topology


def wide_observation_model():
    """Sensor 0 observa x_0 + x_3: su informacion ocupa la banda 3."""

    n = 6
    F = sparse.diags([0.1 * np.ones(n - 1), 0.5 * np.ones(n), 0.1 * np.ones(n - 1)], [-1, 0, 1], format="csr")
    H = np.zeros((2, n))
    H[0, [0, 3]] = 1.0
    H[1, [1, 2, 4, 5]] = 1.0
    model = GlobalModel(
        F=F,
        G=sparse.identity(n, format="csr"),
        Q=np.eye(n),
        H=H,
        R=np.eye(2),
        S0=np.eye(n),
        sensor_rows=((0, 0, 1), (1, 1, 2)),
    )
    model.validate()
    return model


class TestCentralFilters:

    def test_cif_matches_kalman(self, small_random_model):
        model = small_random_model
        y = simulate(model, STEPS, seed=8).observations
        info, cov = cif_init(model), kalman_init(model)
        for k in range(STEPS):
            filtered = cif_filter(info, model, y[k])
            cov_filtered, cov = kalman_step(cov, model, y[k])
            np.testing.assert_allclose(filtered.S, cov_filtered.P, atol=1e-9)
            np.testing.assert_allclose(filtered.x_hat, cov_filtered.x, atol=1e-9)
            info = cif_predict(filtered, model)
            np.testing.assert_allclose(info.S, cov.P, atol=1e-9)

    def test_full_band_clbif_matches_cif(self, small_random_model):
        model = small_random_model
        L = model.n - 1
        y = simulate(model, STEPS, seed=9).observations
        cif, clbif = cif_init(model), clbif_init(model, L)
        for k in range(STEPS):
            cif_f = cif_filter(cif, model, y[k])
            clbif_f = clbif_filter(clbif, model, y[k], L)
            np.testing.assert_allclose(clbif_f.Z, cif_f.Z, atol=1e-9)
            np.testing.assert_allclose(clbif_f.z_hat, cif_f.z_hat, atol=1e-9)
            cif, clbif = cif_predict(cif_f, model), clbif_predict(clbif_f, model, L)

    def test_clbif_stays_banded(self, medium_random_model):
        model = medium_random_model
        y = simulate(model, 5, seed=1).observations
        state = clbif_init(model, 2)
        offsets = np.abs(np.subtract.outer(np.arange(model.n), np.arange(model.n)))
        for k in range(5):
            state = clbif_predict(clbif_filter(state, model, y[k], 2), model, 2)
            assert np.all(state.Z[offsets > 2] == 0.0)
            assert state.L == 2

    def test_L_beyond_n_is_clamped(self, five_state_model):
        assert clbif_init(five_state_model, 12).L == 4

    def test_trial_columns(self, five_state_model):
        model = five_state_model
        y = np.stack([simulate(model, 3, seed=s).observations for s in (1, 2)], axis=2)
        batch = cif_init(model, columns=2)
        singles = [cif_init(model), cif_init(model)]
        for k in range(3):
            batch = cif_predict(cif_filter(batch, model, y[k]), model)
            singles = [cif_predict(cif_filter(s, model, y[k, :, c]), model) for c, s in enumerate(singles)]
        for c, single in enumerate(singles):
            np.testing.assert_allclose(batch.z_hat[:, c], single.z_hat, atol=1e-12)

    def test_filter_adds_exact_information(self, medium_random_model):
        model = medium_random_model
        assert observation_width(model) > 2
        state = clbif_init(model, 2)
        filtered = clbif_filter(state, model, np.zeros(model.p), 2)
        np.testing.assert_allclose(filtered.Z - state.Z, observation_information(model), atol=1e-12)

    def test_observation_width(self, five_state_model):
        assert observation_width(five_state_model) == 2
        assert filter_band(five_state_model, 1) == 2
        assert filter_band(five_state_model, 3) == 3
        assert filter_band(five_state_model, 12) == 4
        direct = block_observation_model(np.diag(np.full(4, 0.5)), [[0, 3], [1, 2]])
        assert observation_width(direct) == 0


class TestBandedTraces:

    @pytest.fixture(scope="class")
    def wide_model(self):
        return build_random_model(40, 4, 2, 0.3, 14, np.random.default_rng(7))

    def test_traces_stay_above_riccati(self, wide_model):
        riccati = riccati_steady_trace(wide_model)
        for L in (1, 2, 5, 13):
            assert clbif_steady_trace(wide_model, L) >= 0.95 * riccati

    def test_traces_do_not_grow_with_L(self, wide_model):
        traces = [clbif_steady_trace(wide_model, L) for L in (1, 2, 5, 13, 39)]
        for coarse, fine in zip(traces, traces[1:]):
            assert fine <= 1.02 * coarse
        assert traces[-1] == pytest.approx(riccati_steady_trace(wide_model), rel=1e-4)


class TestRiccati:

    def test_matches_iterated_recursion(self, five_state_model):
        model = five_state_model
        state = kalman_init(model)
        for _ in range(500):
            filtered, state = kalman_step(state, model, np.zeros(model.p))
        predicted, steady_filtered = riccati_steady_state(model)
        np.testing.assert_allclose(predicted, state.P, atol=1e-8)
        np.testing.assert_allclose(steady_filtered, filtered.P, atol=1e-8)
        assert riccati_steady_trace(model) == pytest.approx(np.trace(filtered.P), rel=1e-8)

    @pytest.mark.parametrize("trace", [float("nan"), float("inf"), 2e12])
    def test_check_trace(self, trace):
        with pytest.raises(FilterDivergenceError, match="diverge en el paso 3"):
            check_trace(3, trace)

    def test_check_trace_accepts_finite(self):
        check_trace(0, 5.0)


class TestLocalFilters:

    def test_matches_clbif(self, small_random_model):
        model = small_random_model
        y = simulate(model, STEPS, seed=21).observations
        bank, _ = local_bank(model, converged_config(1, gamma=stable_gamma(model, 1)))
        assert bank.W == observation_width(model) > bank.L
        states = bank.initial_states()
        reference = clbif_init(model, 1)
        z0, Z0 = bank.assemble(states)
        np.testing.assert_allclose(Z0, reference.Z, atol=1e-10)
        for k in range(STEPS):
            filtered, states, report = bank.step(states, y[k])
            ref_filtered = clbif_filter(reference, model, y[k], 1)
            z_hat, Z = bank.assemble(filtered)
            np.testing.assert_allclose(z_hat, ref_filtered.z_hat, atol=1e-6)
            np.testing.assert_allclose(Z, ref_filtered.Z, atol=1e-6)
            np.testing.assert_allclose(bank.assemble_estimates(filtered), ref_filtered.x_hat, atol=1e-6)
            assert report.trace_filtered == pytest.approx(ref_filtered.trace(), rel=1e-6)
            reference = clbif_predict(ref_filtered, model, 1)
            z_pred, Z_pred = bank.assemble(states)
            np.testing.assert_allclose(z_pred, reference.z_hat, atol=1e-6)
            np.testing.assert_allclose(Z_pred, reference.Z, atol=1e-6)
            assert report.trace_predicted == pytest.approx(np.trace(reference.S), rel=1e-6)

    def test_shared_estimates_agree(self, small_random_model):
        model = small_random_model
        y = simulate(model, 5, seed=2).observations
        bank, topology = local_bank(model, converged_config(1, gamma=stable_gamma(model, 1)))
        states = bank.initial_states()
        for k in range(5):
            filtered, states, _ = bank.step(states, y[k])
        assert max(check_estimate_consensus(filtered, topology.holders, "x_hat").values()) < 1e-8
        assert max(check_estimate_consensus(filtered, topology.holders, "z_hat").values()) < 1e-8

    def test_stepwise_api(self, five_state_model):
        model = five_state_model
        y = simulate(model, 1, seed=0).observations[0]
        bank, _ = local_bank(model, converged_config(1, gamma=stable_gamma(model, 1)))
        states = bank.initial_states()
        fused = lif_fuse(bank, y)
        filtered, matrix, vector = lif_filter_step(bank, states, fused)
        predicted = lif_prediction_step(bank, filtered, matrix, vector)
        assert all(state.phase == "predicted" and state.k == 1 for state in predicted.values())
        assert all(state.S is not None for state in filtered.values())
        # el sensor 1 recibe x_0 y x_4 como entradas externas
        np.testing.assert_allclose(predicted[1].d_hat, vector.assemble()[[0, 4]], atol=1e-10)

    def test_single_sensor_full_band_matches_cif(self, five_state_model):
        base = five_state_model
        model = GlobalModel(
            F=base.F, G=base.G, Q=base.Q, H=base.H, R=base.R, S0=base.S0, sensor_rows=((0, 0, 3),)
        )
        y = simulate(model, 10, seed=5).observations
        bank, _ = local_bank(model, converged_config(4, gamma=stable_gamma(model, 4)))
        states = bank.initial_states()
        cif = cif_init(model)
        for k in range(10):
            filtered, states, _ = bank.step(states, y[k])
            cif_f = cif_filter(cif, model, y[k])
            z_hat, Z = bank.assemble(filtered)
            np.testing.assert_allclose(Z, cif_f.Z, atol=1e-9)
            np.testing.assert_allclose(z_hat, cif_f.z_hat, atol=1e-9)
            cif = cif_predict(cif_f, model)

    def test_locality_limit(self):
        n = 10
        F = sparse.diags([0.1 * np.ones(n - 1), 0.5 * np.ones(n), 0.1 * np.ones(n - 1)], [-1, 0, 1])
        model = block_observation_model(F, [[0, 9], list(range(1, 9))])
        with pytest.raises(LocalityError) as excinfo:
            local_bank(model, converged_config(1))
        assert excinfo.value.sensor == 0
        assert excinfo.value.span == 10
        assert excinfo.value.limit == 8

    def test_uncovered_filter_band(self):
        model = wide_observation_model()
        assert filter_band(model, 1) == 3
        subsystems = decompose(model, 1)
        topology = build_fusion_topology(model, subsystems)
        with pytest.raises(BandError, match="banda 3 > L=1"):
            LocalFilterBank(model, subsystems, topology, converged_config(1))
        bank, _ = local_bank(model, converged_config(1))
        assert (bank.L, bank.W) == (1, 3)

    def test_payload_within_locality_bound(self, five_state_model):
        model = five_state_model
        subsystems = decompose(model, filter_band(model, 1))
        topology = build_fusion_topology(model, subsystems)
        network = CommNetwork(topology.comm_graph)
        bank = LocalFilterBank(
            model, subsystems, topology, converged_config(1, gamma=stable_gamma(model, 1)), network=network
        )
        bound = max(max(sub.n_l ** 2, sub.n_l) for sub in subsystems)
        assert network.payload_limit == bound
        states = bank.initial_states()
        for y in simulate(model, 3, seed=4).observations:
            _, states, _ = bank.step(states, y)
        assert 0 < network.traffic_report().max_payload <= bound

    def test_payload_limit_is_enforced(self, five_state_model):
        model = five_state_model
        subsystems = decompose(model, filter_band(model, 1))
        topology = build_fusion_topology(model, subsystems)
        network = CommNetwork(topology.comm_graph, payload_limit=1)
        bank = LocalFilterBank(model, subsystems, topology, converged_config(1), network=network)
        with pytest.raises(PayloadLimitError):
            bank.step(bank.initial_states(), simulate(model, 1, seed=0).observations[0])
